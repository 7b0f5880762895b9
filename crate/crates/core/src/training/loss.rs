use crate::backward::BackwardNet;
use crate::model::{ForwardNet, HookState, ModelError, StepVars};
use crate::numerics::{ParamStore, Tape, Tensor, Var};
use crate::textproc::{CorpusExample, Vocab, BOS, EOS};

/// Offset inside the logs of the binary cross-entropy, so exact 0/1
/// probabilities stay finite.
pub const BCE_EPS: f64 = 1e-12;

/// A corpus example mapped to vocabulary ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub source_ids: Vec<usize>,
    pub summary_ids: Vec<usize>,
    /// `summary_ids` followed by end-of-sequence.
    pub target_ids: Vec<usize>,
    pub tags: Vec<u8>,
}

impl EncodedExample {
    pub fn new(example: &CorpusExample, vocab: &Vocab) -> Self {
        let summary_ids = vocab.encode(&example.summary_tokens);
        let mut target_ids = summary_ids.clone();
        target_ids.push(EOS);
        EncodedExample {
            source_ids: vocab.encode(&example.document.tokens),
            summary_ids,
            target_ids,
            tags: example.gold_tags.clone(),
        }
    }
}

/// Mean binary cross-entropy of probabilities against 0/1 targets, on plain values.
pub fn binary_cross_entropy(probs: &[f64], targets: &[u8]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            if t == 1 {
                -(p + BCE_EPS).ln()
            } else {
                -(1.0 - p + BCE_EPS).ln()
            }
        })
        .sum();
    total / probs.len() as f64
}

/// Tape version of [`binary_cross_entropy`] for `[n, 1]` probabilities.
pub fn bce_on(tape: &mut Tape, probs: Var, targets: &[u8]) -> Result<Var, ModelError> {
    let n = targets.len();
    let pos: Vec<f64> = targets.iter().map(|&t| f64::from(t)).collect();
    let neg: Vec<f64> = pos.iter().map(|t| 1.0 - t).collect();
    let pos = tape.constant(Tensor::matrix(n, 1, pos)?)?;
    let neg = tape.constant(Tensor::matrix(n, 1, neg)?)?;
    let p = tape.affine(probs, 1.0, BCE_EPS)?;
    let lp = tape.log(p)?;
    let q = tape.affine(probs, -1.0, 1.0 + BCE_EPS)?;
    let lq = tape.log(q)?;
    let a = tape.mul(pos, lp)?;
    let b = tape.mul(neg, lq)?;
    let ll = tape.add(a, b)?;
    let mean = tape.mean(ll)?;
    Ok(tape.affine(mean, -1.0, 0.0)?)
}

/// Teacher-forced decoder pass from the start token over `targets`.
pub fn teacher_forced_steps(
    tape: &mut Tape,
    net: &ForwardNet,
    enc: &crate::model::Encoded,
    hook: &HookState,
    targets: &[usize],
) -> Result<Vec<StepVars>, ModelError> {
    let mut prev = BOS;
    let mut state = enc.final_state;
    let mut steps = Vec::with_capacity(targets.len());
    for &t in targets {
        let step = net.step(tape, enc, hook, prev, state)?;
        state = step.state;
        steps.push(step);
        prev = t;
    }
    Ok(steps)
}

/// Mean negative log-likelihood of `targets` given their step outputs.
pub fn nll_on(tape: &mut Tape, steps: &[StepVars], targets: &[usize]) -> Result<Var, ModelError> {
    let mut logs = Vec::with_capacity(targets.len());
    for (step, &t) in steps.iter().zip(targets) {
        let p = tape.gather(step.output_dist, &[t])?;
        logs.push(tape.log(p)?);
    }
    let all = tape.concat(&logs, 0)?;
    let mean = tape.mean(all)?;
    Ok(tape.affine(mean, -1.0, 0.0)?)
}

/// Forward-model losses recorded on one tape.
pub struct ForwardLosses {
    pub prediction: Var,
    pub hook: Var,
    pub total: Var,
    pub steps: Vec<StepVars>,
}

/// Prediction NLL with gold tags as effective hook values, plus hook BCE, sharing one encoder pass.
pub fn forward_losses(
    tape: &mut Tape,
    params: &ParamStore,
    ex: &EncodedExample,
) -> Result<ForwardLosses, ModelError> {
    let net = ForwardNet::bind(tape, params)?;
    let enc = net.encode(tape, &ex.source_ids)?;
    let hook_probs = net.hook(tape, enc.states)?;
    let hook = bce_on(tape, hook_probs, &ex.tags)?;
    let steps = teacher_forced_steps(
        tape,
        &net,
        &enc,
        &HookState::from_tags(&ex.tags),
        &ex.target_ids,
    )?;
    let prediction = nll_on(tape, &steps, &ex.target_ids)?;
    let total = tape.add(prediction, hook)?;
    Ok(ForwardLosses {
        prediction,
        hook,
        total,
        steps,
    })
}

pub fn prediction_loss(
    tape: &mut Tape,
    params: &ParamStore,
    ex: &EncodedExample,
) -> Result<Var, ModelError> {
    let net = ForwardNet::bind(tape, params)?;
    let enc = net.encode(tape, &ex.source_ids)?;
    let steps = teacher_forced_steps(
        tape,
        &net,
        &enc,
        &HookState::from_tags(&ex.tags),
        &ex.target_ids,
    )?;
    nll_on(tape, &steps, &ex.target_ids)
}

pub fn hook_loss(
    tape: &mut Tape,
    params: &ParamStore,
    ex: &EncodedExample,
) -> Result<Var, ModelError> {
    let net = ForwardNet::bind(tape, params)?;
    let enc = net.encode(tape, &ex.source_ids)?;
    let probs = net.hook(tape, enc.states)?;
    bce_on(tape, probs, &ex.tags)
}

/// Usage probabilities of the source against the gold summary, `[n, 1]`.
pub fn backward_usage(
    tape: &mut Tape,
    params: &ParamStore,
    ex: &EncodedExample,
) -> Result<Var, ModelError> {
    let net = BackwardNet::bind(tape, params)?;
    let x = net.contextualize(tape, &ex.source_ids)?;
    let summary = if ex.summary_ids.is_empty() {
        vec![BOS]
    } else {
        ex.summary_ids.clone()
    };
    let y = net.contextualize(tape, &summary)?;
    net.usage(tape, x, y)
}

pub fn backward_model_loss(
    tape: &mut Tape,
    params: &ParamStore,
    ex: &EncodedExample,
) -> Result<Var, ModelError> {
    let probs = backward_usage(tape, params, ex)?;
    bce_on(tape, probs, &ex.tags)
}
