use super::{NumericsError, ParamStore, Tape, Var};

/// Largest relative disagreement between tape gradients and central finite
/// differences over every parameter entry of `params`.
///
/// The relative error of one entry is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
/// `loss_fn` must be deterministic; two forward passes that disagree are reported as
/// [`NumericsError::NonDeterministic`].
pub fn grad_check<F, E>(loss_fn: F, params: &ParamStore, epsilon: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<NumericsError>,
{
    if !(epsilon > 0.0) {
        return Err(
            NumericsError::Contract(format!("epsilon must be positive, got {epsilon}")).into(),
        );
    }
    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, store)?;
        Ok(tape.value(loss).item()?)
    };

    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    let base = tape.value(loss).item()?;
    if eval(params)?.to_bits() != base.to_bits() {
        return Err(NumericsError::NonDeterministic.into());
    }
    let analytic = tape.backward(loss)?;

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let n = params.get(name).map(|t| t.numel()).unwrap_or(0);
        for i in 0..n {
            let orig = params.get(name).expect("listed").data()[i];
            probe.get_mut(name).expect("listed").data_mut()[i] = orig + epsilon;
            let plus = eval(&probe)?;
            probe.get_mut(name).expect("listed").data_mut()[i] = orig - epsilon;
            let minus = eval(&probe)?;
            probe.get_mut(name).expect("listed").data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic.get(name).map(|g| g.data()[i]).unwrap_or(0.0);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
