//! Single-layer GRU composed from tape kernels.

use crate::numerics::{NumericsError, ParamStore, Prng, Tape, Tensor, Var};

const GATES: [&str; 3] = ["z", "r", "n"];

/// Registers the nine GRU tensors under `prefix`.
pub(crate) fn init(
    store: &mut ParamStore,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
    prng: &mut Prng,
) -> Result<(), NumericsError> {
    for g in GATES {
        store.insert(
            &format!("{prefix}.w_{g}"),
            gaussian(
                prng,
                &[input_dim, hidden_dim],
                (1.0 / input_dim as f64).sqrt(),
            ),
        )?;
        store.insert(
            &format!("{prefix}.u_{g}"),
            gaussian(
                prng,
                &[hidden_dim, hidden_dim],
                (1.0 / hidden_dim as f64).sqrt(),
            ),
        )?;
        store.insert(&format!("{prefix}.b_{g}"), Tensor::zeros(&[1, hidden_dim]))?;
    }
    Ok(())
}

pub(crate) fn gaussian(prng: &mut Prng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| prng.gaussian() * std).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// GRU weights bound to one tape.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Gru {
    w: [Var; 3],
    u: [Var; 3],
    b: [Var; 3],
}

impl Gru {
    pub(crate) fn bind(
        tape: &mut Tape,
        store: &ParamStore,
        prefix: &str,
    ) -> Result<Self, NumericsError> {
        let mut w = Vec::with_capacity(3);
        let mut u = Vec::with_capacity(3);
        let mut b = Vec::with_capacity(3);
        for g in GATES {
            w.push(tape.param(store, &format!("{prefix}.w_{g}"))?);
            u.push(tape.param(store, &format!("{prefix}.u_{g}"))?);
            b.push(tape.param(store, &format!("{prefix}.b_{g}"))?);
        }
        let arr = |v: Vec<Var>| [v[0], v[1], v[2]];
        Ok(Gru {
            w: arr(w),
            u: arr(u),
            b: arr(b),
        })
    }

    /// Input projections `x·W_g + b_g` for every row of `x` at once.
    fn project(&self, tape: &mut Tape, x: Var) -> Result<[Var; 3], NumericsError> {
        let mut out = [x; 3];
        for g in 0..3 {
            let xw = tape.matmul(x, self.w[g])?;
            out[g] = tape.add(xw, self.b[g])?;
        }
        Ok(out)
    }

    fn cell(&self, tape: &mut Tape, xp: [Var; 3], h: Var) -> Result<Var, NumericsError> {
        let hz = tape.matmul(h, self.u[0])?;
        let hr = tape.matmul(h, self.u[1])?;
        let hn = tape.matmul(h, self.u[2])?;
        let z_pre = tape.add(xp[0], hz)?;
        let z = tape.sigmoid(z_pre)?;
        let r_pre = tape.add(xp[1], hr)?;
        let r = tape.sigmoid(r_pre)?;
        let rh = tape.mul(r, hn)?;
        let n_pre = tape.add(xp[2], rh)?;
        let n = tape.tanh(n_pre)?;
        // h' = (1 - z) * n + z * h
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }

    /// One step on a `[1, input_dim]` input.
    pub(crate) fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var, NumericsError> {
        let xp = self.project(tape, x)?;
        self.cell(tape, xp, h)
    }

    /// Runs over every row of `inputs` (`[n, input_dim]`), returning all
    /// states stacked as `[n, hidden]` and the last state `[1, hidden]`.
    pub(crate) fn run(
        &self,
        tape: &mut Tape,
        inputs: Var,
        h0: Var,
    ) -> Result<(Var, Var), NumericsError> {
        let n = tape.value(inputs).shape()[0];
        let proj = self.project(tape, inputs)?;
        let mut h = h0;
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            let xp = [
                tape.rows(proj[0], t, t + 1)?,
                tape.rows(proj[1], t, t + 1)?,
                tape.rows(proj[2], t, t + 1)?,
            ];
            h = self.cell(tape, xp, h)?;
            states.push(h);
        }
        let stacked = if n == 1 { h } else { tape.concat(&states, 0)? };
        Ok((stacked, h))
    }
}
