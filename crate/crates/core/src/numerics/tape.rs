//! Reverse-mode differentiation over a linear tape of kernel applications.

use std::collections::BTreeMap;

use super::{kernels, NumericsError, ParamStore, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    Affine(Var, f64, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, usize),
    MaskedSoftmax(Var, usize, Vec<bool>),
    Concat(Vec<Var>, usize),
    Embedding(Var, Vec<usize>),
    Transpose(Var),
    Rows(Var, usize, usize),
    Gather(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>, usize),
    Sum(Var),
    Mean(Var),
    Reshape(Var, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::ScaleBy(..) => "scale_by",
            Op::Affine(..) => "affine",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softmax(..) => "softmax",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::Concat(..) => "concat",
            Op::Embedding(..) => "embedding",
            Op::Transpose(_) => "transpose",
            Op::Rows(..) => "rows",
            Op::Gather(..) => "gather",
            Op::ScatterAdd(..) => "scatter_add",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(..) => "reshape",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Per-parameter gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(BTreeMap<String, Tensor>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Adds `other` into `self` entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.0 {
            match self.0.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.0.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.0.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }
}

/// Records kernel applications in evaluation order. Single-threaded; build one
/// per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(op.name()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn record(&mut self, op: Op) -> Result<Var, NumericsError> {
        let value = self.eval(&op)?;
        self.push(value, op)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, NumericsError> {
        self.push(value, Op::Constant)
    }

    /// Binds the named parameter of `store` to this tape. Repeated calls with
    /// the same name return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, NumericsError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| NumericsError::Contract(format!("unknown parameter '{name}'")))?
            .clone();
        let v = self.push(value, Op::Param)?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.record(Op::MatMul(a, b))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.record(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.record(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.record(Op::Mul(a, b))
    }
    /// `a` times the single value held by `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        self.record(Op::ScaleBy(a, s))
    }
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, NumericsError> {
        self.record(Op::Affine(a, scale, shift))
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.record(Op::Tanh(a))
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.record(Op::Sigmoid(a))
    }
    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.record(Op::Exp(a))
    }
    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.record(Op::Log(a))
    }
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        self.record(Op::Softmax(a, axis))
    }
    /// See [`kernels::masked_softmax`]; `support[i] == false` excludes entry `i`.
    pub fn masked_softmax(
        &mut self,
        a: Var,
        axis: usize,
        support: Vec<bool>,
    ) -> Result<Var, NumericsError> {
        self.record(Op::MaskedSoftmax(a, axis, support))
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericsError> {
        self.record(Op::Concat(parts.to_vec(), axis))
    }
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        self.record(Op::Embedding(table, ids.to_vec()))
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.record(Op::Transpose(a))
    }
    pub fn rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        self.record(Op::Rows(a, start, end))
    }
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        self.record(Op::Gather(a, indices.to_vec()))
    }
    pub fn scatter_add(
        &mut self,
        a: Var,
        targets: &[usize],
        width: usize,
    ) -> Result<Var, NumericsError> {
        self.record(Op::ScatterAdd(a, targets.to_vec(), width))
    }
    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.record(Op::Sum(a))
    }
    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.record(Op::Mean(a))
    }
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        self.record(Op::Reshape(a, shape.to_vec()))
    }

    fn eval(&self, op: &Op) -> Result<Tensor, NumericsError> {
        self.eval_with(op, |v| &self.nodes[v.0].value)
    }

    fn eval_with<'a>(
        &self,
        op: &Op,
        val: impl Fn(Var) -> &'a Tensor,
    ) -> Result<Tensor, NumericsError> {
        use kernels as k;
        Ok(match op {
            Op::Constant | Op::Param => unreachable!("leaves are not evaluated"),
            Op::MatMul(a, b) => k::matmul(val(*a), val(*b))?,
            Op::Add(a, b) => k::add(val(*a), val(*b))?,
            Op::Sub(a, b) => k::sub(val(*a), val(*b))?,
            Op::Mul(a, b) => k::mul(val(*a), val(*b))?,
            Op::ScaleBy(a, s) => k::scale_by(val(*a), val(*s))?,
            Op::Affine(a, scale, shift) => k::affine(val(*a), *scale, *shift),
            Op::Tanh(a) => k::tanh(val(*a)),
            Op::Sigmoid(a) => k::sigmoid(val(*a)),
            Op::Exp(a) => k::exp(val(*a)),
            Op::Log(a) => k::log(val(*a))?,
            Op::Softmax(a, axis) => k::softmax(val(*a), *axis)?,
            Op::MaskedSoftmax(a, axis, support) => k::masked_softmax(val(*a), *axis, support)?,
            Op::Concat(parts, axis) => {
                let parts: Vec<&Tensor> = parts.iter().map(|p| val(*p)).collect();
                k::concat(&parts, *axis)?
            }
            Op::Embedding(t, ids) => k::embedding(val(*t), ids)?,
            Op::Transpose(a) => k::transpose(val(*a))?,
            Op::Rows(a, s, e) => k::rows(val(*a), *s, *e)?,
            Op::Gather(a, idx) => k::gather(val(*a), idx)?,
            Op::ScatterAdd(a, t, w) => k::scatter_add(val(*a), t, *w)?,
            Op::Sum(a) => k::sum(val(*a)),
            Op::Mean(a) => k::mean(val(*a)),
            Op::Reshape(a, shape) => val(*a).reshaped(shape.clone())?,
        })
    }

    /// Re-evaluates every node from its recorded inputs, returning the fresh values.
    pub fn replay(&self) -> Result<Vec<Tensor>, NumericsError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Constant | Op::Param => node.value.clone(),
                ref op => {
                    let vals = &values;
                    self.eval_with(op, |v| &vals[v.0])?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Gradients of the scalar `loss` with respect to every parameter bound to
    /// this tape. Parameters the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Op::Constant | Op::Param = node.op {
                adj[idx] = Some(g);
                continue;
            }
            for (input, grad) in self.vjp(node, &g)? {
                match &mut adj[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(grad.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(grad),
                }
            }
        }

        let mut out = BTreeMap::new();
        for (name, v) in &self.params {
            let g = adj
                .get_mut(v.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            out.insert(name.clone(), g);
        }
        Ok(Gradients(out))
    }

    /// Like [`Tape::backward`], writing into `store`'s gradient slots.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<(), NumericsError> {
        let grads = self.backward(loss)?;
        store.set_grads(&grads)
    }

    fn vjp(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>, NumericsError> {
        use kernels as k;
        let val = |v: &Var| &self.nodes[v.0].value;
        let y = &node.value;
        let zip_map = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = a
                .data()
                .iter()
                .zip(g.data())
                .map(|(&x, &gy)| f(x, gy))
                .collect();
            Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
        };
        Ok(match &node.op {
            Op::Constant | Op::Param => Vec::new(),
            Op::MatMul(a, b) => {
                let da = k::matmul(g, &k::transpose(val(b))?)?;
                let db = k::matmul(&k::transpose(val(a))?, g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => {
                let db = if val(b).shape() == g.shape() {
                    g.clone()
                } else {
                    let (rows, cols) = g.dims2()?;
                    let mut acc = vec![0.0; cols];
                    for r in 0..rows {
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += g.data()[r * cols + c];
                        }
                    }
                    Tensor::new(val(b).shape().to_vec(), acc)?
                };
                vec![(*a, g.clone()), (*b, db)]
            }
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, k::affine(g, -1.0, 0.0))],
            Op::Mul(a, b) => vec![(*a, k::mul(g, val(b))?), (*b, k::mul(g, val(a))?)],
            Op::ScaleBy(a, s) => {
                let sv = val(s).item()?;
                let ds: f64 = g.data().iter().zip(val(a).data()).map(|(x, y)| x * y).sum();
                vec![
                    (*a, k::affine(g, sv, 0.0)),
                    (*s, Tensor::new(val(s).shape().to_vec(), vec![ds])?),
                ]
            }
            Op::Affine(a, scale, _) => vec![(*a, k::affine(g, *scale, 0.0))],
            Op::Tanh(a) => vec![(*a, zip_map(y, &|t, gy| gy * (1.0 - t * t)))],
            Op::Sigmoid(a) => vec![(*a, zip_map(y, &|s, gy| gy * s * (1.0 - s)))],
            Op::Exp(a) => vec![(*a, zip_map(y, &|e, gy| gy * e))],
            Op::Log(a) => vec![(*a, zip_map(val(a), &|x, gy| gy / x))],
            Op::Softmax(a, axis) | Op::MaskedSoftmax(a, axis, _) => {
                let (outer, len, inner) = k::axis_split(y.shape(), *axis)?;
                let (yd, gd) = (y.data(), g.data());
                let mut out = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| yd[idx(j)] * gd[idx(j)]).sum();
                        for j in 0..len {
                            out[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                vec![(*a, Tensor::new(y.shape().to_vec(), out)?)]
            }
            Op::Concat(parts, axis) => {
                let outer: usize = y.shape()[..*axis].iter().product();
                let inner: usize = y.shape()[axis + 1..].iter().product();
                let total = y.shape()[*axis] * inner;
                let mut offset = 0;
                let mut grads = Vec::with_capacity(parts.len());
                for p in parts {
                    let pv = val(p);
                    let chunk = pv.shape()[*axis] * inner;
                    let mut data = Vec::with_capacity(pv.numel());
                    for o in 0..outer {
                        data.extend_from_slice(
                            &g.data()[o * total + offset..o * total + offset + chunk],
                        );
                    }
                    offset += chunk;
                    grads.push((*p, Tensor::new(pv.shape().to_vec(), data)?));
                }
                grads
            }
            Op::Embedding(t, ids) => {
                let table = val(t);
                let dim = table.shape()[1];
                let mut out = Tensor::zeros(table.shape());
                let od = out.data_mut();
                for (j, &id) in ids.iter().enumerate() {
                    for c in 0..dim {
                        od[id * dim + c] += g.data()[j * dim + c];
                    }
                }
                vec![(*t, out)]
            }
            Op::Transpose(a) => vec![(*a, k::transpose(g)?)],
            Op::Rows(a, start, _) => {
                let av = val(a);
                let cols = av.shape()[1];
                let mut out = Tensor::zeros(av.shape());
                out.data_mut()[start * cols..start * cols + g.numel()].copy_from_slice(g.data());
                vec![(*a, out)]
            }
            Op::Gather(a, idx) => {
                let mut out = Tensor::zeros(val(a).shape());
                for (j, &i) in idx.iter().enumerate() {
                    out.data_mut()[i] += g.data()[j];
                }
                vec![(*a, out)]
            }
            Op::ScatterAdd(a, targets, width) => {
                let av = val(a);
                let (rows, cols) = av.dims2()?;
                let mut data = vec![0.0; rows * cols];
                for r in 0..rows {
                    for (c, &t) in targets.iter().enumerate() {
                        data[r * cols + c] = g.data()[r * width + t];
                    }
                }
                vec![(*a, Tensor::new(av.shape().to_vec(), data)?)]
            }
            Op::Sum(a) => {
                let gv = g.item()?;
                vec![(*a, Tensor::full(val(a).shape(), gv))]
            }
            Op::Mean(a) => {
                let av = val(a);
                let gv = g.item()? / av.numel() as f64;
                vec![(*a, Tensor::full(av.shape(), gv))]
            }
            Op::Reshape(a, _) => vec![(*a, g.reshaped(val(a).shape().to_vec())?)],
        })
    }
}
