use std::fmt::Write;

use super::InferenceError;

const NORMALIZATION_TOL: f64 = 1e-12;

/// A finite latent variable `z` with prior `p(z)` and an outcome table `p(y | z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteLatentModel {
    latent_values: Vec<String>,
    outcomes: Vec<String>,
    prior: Vec<f64>,
    /// One row per latent value, one column per outcome.
    likelihood: Vec<Vec<f64>>,
}

impl DiscreteLatentModel {
    pub fn new(
        latent_values: Vec<String>,
        outcomes: Vec<String>,
        prior: Vec<f64>,
        likelihood: Vec<Vec<f64>>,
    ) -> Result<Self, InferenceError> {
        let bad = |m: String| Err(InferenceError::InvalidLatentModel(m));
        if latent_values.is_empty() || outcomes.is_empty() {
            return bad("latent values and outcomes must be non-empty".into());
        }
        if prior.len() != latent_values.len() || likelihood.len() != latent_values.len() {
            return bad("prior and likelihood need one entry per latent value".into());
        }
        let is_distribution = |row: &[f64]| {
            row.iter().all(|p| (0.0..=1.0).contains(p))
                && (row.iter().sum::<f64>() - 1.0).abs() <= NORMALIZATION_TOL
        };
        if !is_distribution(&prior) {
            return bad(format!("prior {prior:?} is not a distribution"));
        }
        for (z, row) in latent_values.iter().zip(&likelihood) {
            if row.len() != outcomes.len() || !is_distribution(row) {
                return bad(format!(
                    "likelihood row for '{z}' is not a distribution over the outcomes"
                ));
            }
        }
        Ok(DiscreteLatentModel {
            latent_values,
            outcomes,
            prior,
            likelihood,
        })
    }

    pub fn latent_values(&self) -> &[String] {
        &self.latent_values
    }

    pub fn outcomes(&self) -> &[String] {
        &self.outcomes
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn likelihood(&self) -> &[Vec<f64>] {
        &self.likelihood
    }

    fn outcome_index(&self, outcome: &str) -> Result<usize, InferenceError> {
        self.outcomes
            .iter()
            .position(|o| o == outcome)
            .ok_or_else(|| InferenceError::UnknownOutcome(outcome.to_string()))
    }

    /// Joint `p(y, z)` for every latent value.
    pub fn joint(&self, outcome: &str) -> Result<Vec<f64>, InferenceError> {
        let y = self.outcome_index(outcome)?;
        Ok(self
            .prior
            .iter()
            .zip(&self.likelihood)
            .map(|(p, row)| row[y] * p)
            .collect())
    }
}

/// `p(y) = sum_z p(y | z) p(z)` by enumeration.
pub fn marginal(model: &DiscreteLatentModel, outcome: &str) -> Result<f64, InferenceError> {
    Ok(model.joint(outcome)?.iter().sum())
}

/// `p(z | y)`; errors when the outcome has zero probability.
pub fn posterior(model: &DiscreteLatentModel, outcome: &str) -> Result<Vec<f64>, InferenceError> {
    let joint = model.joint(outcome)?;
    let total: f64 = joint.iter().sum();
    if total <= 0.0 {
        return Err(InferenceError::UnreachableOutcome(outcome.to_string()));
    }
    Ok(joint.iter().map(|j| j / total).collect())
}

/// The train-and-lever model: the lever picks a track, the track decides
/// where the train ends up. `p_correct` is the chance the train follows the
/// track the lever selects.
pub fn lever_model(prior_left: f64, p_correct: f64) -> Result<DiscreteLatentModel, InferenceError> {
    let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    DiscreteLatentModel::new(
        strings(&["left", "right"]),
        strings(&["left end", "right end"]),
        vec![prior_left, 1.0 - prior_left],
        vec![
            vec![p_correct, 1.0 - p_correct],
            vec![1.0 - p_correct, p_correct],
        ],
    )
}

/// Rounds to 12 decimals so `1 - 0.9` prints as `0.1`.
fn shown(p: f64) -> f64 {
    (p * 1e12).round() / 1e12
}

fn describe(
    out: &mut String,
    title: &str,
    model: &DiscreteLatentModel,
) -> Result<(), InferenceError> {
    let _ = writeln!(out, "== {title} ==");
    let prior: Vec<String> = model
        .latent_values
        .iter()
        .zip(&model.prior)
        .map(|(z, p)| format!("{z}={}", shown(*p)))
        .collect();
    let _ = writeln!(out, "prior p(lever): {}", prior.join(" "));
    for (z, row) in model.latent_values.iter().zip(&model.likelihood) {
        let cells: Vec<String> = model
            .outcomes
            .iter()
            .zip(row)
            .map(|(y, p)| format!("{y}={}", shown(*p)))
            .collect();
        let _ = writeln!(out, "p(end | lever={z}): {}", cells.join(" "));
    }
    let _ = writeln!(out, "forward:");
    for y in &model.outcomes {
        let _ = writeln!(out, "  p(end={y}) = {}", shown(marginal(model, y)?));
    }
    let _ = writeln!(out, "backward:");
    for y in &model.outcomes {
        let post = posterior(model, y)?;
        let cells: Vec<String> = model
            .latent_values
            .iter()
            .zip(&post)
            .map(|(z, p)| format!("p(lever={z} | end={y}) = {}", shown(*p)))
            .collect();
        let _ = writeln!(out, "  {}", cells.join("  "));
    }
    Ok(())
}

/// Plain-text walk-through of forward marginals and backward posteriors for
/// the lever model with deterministic and with noisy tracks.
pub fn lever_demo() -> String {
    let mut out = String::new();
    let cases = [("deterministic tracks", 1.0), ("noisy tracks", 0.9)];
    for (i, (title, p_correct)) in cases.into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let model = lever_model(0.5, p_correct).expect("lever parameters are valid");
        describe(&mut out, title, &model).expect("every end is reachable");
    }
    out
}
