//! Forward kernels over [`Tensor`]. Every tape operation evaluates through
//! these functions, so they are also the reference for replay.

use super::{NumericsError, Tensor};

fn contract(msg: String) -> NumericsError {
    NumericsError::Contract(msg)
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<(), NumericsError> {
    if a.shape() != b.shape() {
        return Err(contract(format!(
            "{op}: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&v| f(v)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// `(outer, len, inner)` strides for reducing along `axis`.
pub(crate) fn axis_split(
    shape: &[usize],
    axis: usize,
) -> Result<(usize, usize, usize), NumericsError> {
    if axis >= shape.len() {
        return Err(contract(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        s => return Err(contract(format!("matmul: lhs must be rank 2, got {s:?}"))),
    };
    let (k2, n) = match b.shape() {
        [k2, n] => (*k2, *n),
        s => return Err(contract(format!("matmul: rhs must be rank 2, got {s:?}"))),
    };
    if k != k2 {
        return Err(contract(format!("matmul: inner dims {k} vs {k2}")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Elementwise sum. `b` may also be a `[1, k]` row added to every row of an `[n, k]` `a`.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    match (a.shape(), b.shape()) {
        ([_, k], [1, k2]) if k == k2 => {
            let bd = b.data();
            let data = a
                .data()
                .chunks(*k)
                .flat_map(|row| row.iter().zip(bd).map(|(x, y)| x + y))
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        _ => Err(contract(format!(
            "add: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        ))),
    }
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Multiplies every entry of `a` by the single value held in `s`.
pub fn scale_by(a: &Tensor, s: &Tensor) -> Result<Tensor, NumericsError> {
    let s = s.item()?;
    Ok(map(a, |v| v * s))
}

/// `scale * a + shift` with constant coefficients.
pub fn affine(a: &Tensor, scale: f64, shift: f64) -> Tensor {
    map(a, |v| scale * v + shift)
}

pub fn tanh(a: &Tensor) -> Tensor {
    map(a, f64::tanh)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    map(a, sigmoid_scalar)
}

pub fn exp(a: &Tensor) -> Tensor {
    map(a, f64::exp)
}

/// Natural log. Non-positive entries are a contract violation.
pub fn log(a: &Tensor) -> Result<Tensor, NumericsError> {
    if let Some(v) = a.data().iter().find(|v| **v <= 0.0) {
        return Err(contract(format!("log of non-positive value {v}")));
    }
    Ok(map(a, f64::ln))
}

pub fn softmax(a: &Tensor, axis: usize) -> Result<Tensor, NumericsError> {
    let support = vec![true; a.numel()];
    masked_softmax(a, axis, &support)
}

/// Softmax along `axis` where entries with `support[i] == false` are excluded:
/// they receive exactly `0.0` and the rest renormalize among themselves.
pub fn masked_softmax(a: &Tensor, axis: usize, support: &[bool]) -> Result<Tensor, NumericsError> {
    if support.len() != a.numel() {
        return Err(contract(format!(
            "masked_softmax: mask has {} entries for {} values",
            support.len(),
            a.numel()
        )));
    }
    let (outer, len, inner) = axis_split(a.shape(), axis)?;
    let src = a.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let mut max = f64::NEG_INFINITY;
            for k in 0..len {
                if support[idx(k)] && src[idx(k)] > max {
                    max = src[idx(k)];
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::EmptySupport);
            }
            let mut total = 0.0;
            for k in 0..len {
                if support[idx(k)] {
                    let e = (src[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
            }
            for k in 0..len {
                if support[idx(k)] {
                    out[idx(k)] /= total;
                }
            }
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor, NumericsError> {
    let first = parts
        .first()
        .ok_or_else(|| contract("concat of nothing".into()))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(contract(format!(
            "concat: axis {axis} out of range for rank {rank}"
        )));
    }
    for p in parts {
        let ok = p.rank() == rank
            && p.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (x, y))| d == axis || x == y);
        if !ok {
            return Err(contract(format!(
                "concat: shape {:?} vs {:?}",
                p.shape(),
                first.shape()
            )));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total_len: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total_len * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total_len;
    Tensor::new(shape, data)
}

/// Row lookup: `table[ids[j]]` for each `j`, giving `[ids.len(), dim]`.
pub fn embedding(table: &Tensor, ids: &[usize]) -> Result<Tensor, NumericsError> {
    let (rows, dim) = match table.shape() {
        [r, d] => (*r, *d),
        s => {
            return Err(contract(format!(
                "embedding: table must be rank 2, got {s:?}"
            )))
        }
    };
    if ids.is_empty() {
        return Err(contract("embedding: empty id list".into()));
    }
    let mut data = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        if id >= rows {
            return Err(contract(format!(
                "embedding: id {id} out of range for {rows} rows"
            )));
        }
        data.extend_from_slice(table.row_slice(id));
    }
    Tensor::new(vec![ids.len(), dim], data)
}

pub fn transpose(a: &Tensor) -> Result<Tensor, NumericsError> {
    let (r, c) = match a.shape() {
        [r, c] => (*r, *c),
        s => return Err(contract(format!("transpose: expected rank 2, got {s:?}"))),
    };
    let d = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// Rows `start..end` of a rank-2 tensor.
pub fn rows(a: &Tensor, start: usize, end: usize) -> Result<Tensor, NumericsError> {
    let (r, c) = match a.shape() {
        [r, c] => (*r, *c),
        s => return Err(contract(format!("rows: expected rank 2, got {s:?}"))),
    };
    if start >= end || end > r {
        return Err(contract(format!(
            "rows: range {start}..{end} invalid for {r} rows"
        )));
    }
    Tensor::new(vec![end - start, c], a.data()[start * c..end * c].to_vec())
}

/// Flat-index gather into a rank-1 result.
pub fn gather(a: &Tensor, indices: &[usize]) -> Result<Tensor, NumericsError> {
    if indices.is_empty() {
        return Err(contract("gather: empty index list".into()));
    }
    let d = a.data();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        out.push(
            *d.get(i)
                .ok_or_else(|| contract(format!("gather: index {i} out of range")))?,
        );
    }
    Ok(Tensor::vector(out))
}

/// Adds column `j` of every row of `a` into column `targets[j]` of an output
/// row of width `width`. Rank-1 inputs are treated as one row and give a rank-1 result.
pub fn scatter_add(a: &Tensor, targets: &[usize], width: usize) -> Result<Tensor, NumericsError> {
    let (r, c) = a.dims2()?;
    if targets.len() != c {
        return Err(contract(format!(
            "scatter_add: {} targets for {c} columns",
            targets.len()
        )));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= width) {
        return Err(contract(format!(
            "scatter_add: target {t} out of range for width {width}"
        )));
    }
    let mut out = vec![0.0; r * width];
    for i in 0..r {
        for (j, &t) in targets.iter().enumerate() {
            out[i * width + t] += a.data()[i * c + j];
        }
    }
    let shape = if a.rank() == 1 {
        vec![width]
    } else {
        vec![r, width]
    };
    Tensor::new(shape, out)
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.sum())
}

pub fn mean(a: &Tensor) -> Tensor {
    Tensor::scalar(a.sum() / a.numel() as f64)
}
