//! Losses, optimizer and training loops for the forward and backward models,
//! plus held-out evaluation.

mod adam;
mod loss;
mod metrics;

pub use adam::Adam;
pub use loss::{
    backward_model_loss, backward_usage, bce_on, binary_cross_entropy, forward_losses, hook_loss,
    nll_on, prediction_loss, teacher_forced_steps, EncodedExample, BCE_EPS,
};
pub use metrics::{argmax, roc_auc};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backward::BackwardModel;
use crate::inference::{generate, GenerationRequest, InferenceError};
use crate::model::{ForwardNet, HookState, ModelConfig, ModelError, SummarizerModel};
use crate::numerics::{Gradients, NumericsError, ParamStore, Prng, Tape, Var};
use crate::textproc::{build_vocab, CorpusExample, Vocab};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        // A zero learning rate is accepted: it leaves the weights untouched.
        if !(self.learning_rate >= 0.0) || !(self.adam_eps > 0.0) || !(self.grad_clip_norm > 0.0) {
            return bad("learning_rate must be non-negative; adam_eps and grad_clip_norm positive");
        }
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.adam_beta1) || !in_unit(self.adam_beta2) {
            return bad("adam betas must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One line of the per-epoch metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_pred: Option<f64>,
    pub loss_hook: Option<f64>,
    pub token_acc: Option<f64>,
    pub tag_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_backward: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub token_accuracy: f64,
    pub tag_auc: f64,
    pub masking_violations: usize,
    pub loss_curves: Vec<EpochMetrics>,
}

/// Deterministic 90/10 split by example index: the last tenth is held out.
pub fn split_corpus<T>(corpus: &[T]) -> (&[T], &[T]) {
    let cut = corpus.len() - corpus.len() / 10;
    corpus.split_at(cut)
}

/// Vocabulary over every document and summary token of `corpus`.
pub fn corpus_vocab(corpus: &[CorpusExample]) -> Vocab {
    let docs = corpus
        .iter()
        .flat_map(|ex| [ex.document.tokens.as_slice(), ex.summary_tokens.as_slice()]);
    build_vocab(docs, usize::MAX).expect("max_size exceeds the reserved ids")
}

pub fn encode_corpus(corpus: &[CorpusExample], vocab: &Vocab) -> Vec<EncodedExample> {
    corpus
        .iter()
        .map(|ex| EncodedExample::new(ex, vocab))
        .collect()
}

type LossFn =
    dyn Fn(&mut Tape, &ParamStore, &EncodedExample) -> Result<(Var, Vec<Var>), ModelError> + Sync;

/// Mini-batch Adam with global-norm clipping. Per-example gradients are
/// computed in parallel and summed in example order, so results do not depend
/// on thread scheduling. Returns the mean of every loss component per epoch.
fn optimize(
    params: &mut ParamStore,
    data: &[EncodedExample],
    cfg: &TrainConfig,
    loss_fn: &LossFn,
    mut on_epoch: impl FnMut(usize, &ParamStore, &[f64]) -> Result<(), TrainError>,
) -> Result<(), TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Config("no training examples".into()));
    }
    let mut adam = Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut prng = Prng::new(
            cfg.seed
                .wrapping_mul(0x9E37_79B9)
                .wrapping_add(epoch as u64 + 1),
        );
        prng.shuffle(&mut order);
        let mut sums: Vec<f64> = Vec::new();
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |reason: String| TrainError::Diverged {
                epoch,
                batch: batch_idx,
                reason,
            };
            let results: Vec<Result<(Gradients, Vec<f64>), ModelError>> = batch
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::new();
                    let (total, parts) = loss_fn(&mut tape, params, &data[i])?;
                    let grads = tape.backward(total)?;
                    let values = parts.iter().map(|&p| tape.value(p).data()[0]).collect();
                    Ok((grads, values))
                })
                .collect();
            let mut grads = Gradients::default();
            for r in results {
                let (g, values) = match r {
                    Ok(v) => v,
                    Err(ModelError::Numerics(e @ NumericsError::NonFinite(_))) => {
                        return Err(diverged(e.to_string()))
                    }
                    Err(e) => return Err(e.into()),
                };
                grads.accumulate(&g);
                sums.resize(values.len(), 0.0);
                for (s, v) in sums.iter_mut().zip(values) {
                    *s += v;
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            let norm = grads.global_norm();
            if !norm.is_finite() || sums.iter().any(|s| !s.is_finite()) {
                return Err(diverged(format!(
                    "non-finite loss or gradient norm ({norm})"
                )));
            }
            if norm > cfg.grad_clip_norm {
                grads.scale(cfg.grad_clip_norm / norm);
            }
            adam.update(params, &grads, cfg.learning_rate);
        }
        let means: Vec<f64> = sums.iter().map(|s| s / data.len() as f64).collect();
        log::info!("epoch {epoch}: mean losses {means:?}");
        on_epoch(epoch, params, &means)?;
    }
    Ok(())
}

/// Trains the prediction and hook networks jointly on the first 90% of
/// `corpus`, evaluating token accuracy on the rest after every epoch.
pub fn train_forward(
    corpus: &[CorpusExample],
    vocab: &Vocab,
    hidden_dim: usize,
    cfg: &TrainConfig,
) -> Result<(SummarizerModel, Vec<EpochMetrics>), TrainError> {
    let (train, held) = split_corpus(corpus);
    let (train, held) = (encode_corpus(train, vocab), encode_corpus(held, vocab));
    let mut model = SummarizerModel::new(
        ModelConfig::new(vocab.len(), hidden_dim),
        vocab.clone(),
        cfg.seed,
    )?;
    let mut curves = Vec::with_capacity(cfg.epochs);
    let loss_fn = |tape: &mut Tape, params: &ParamStore, ex: &EncodedExample| {
        let l = forward_losses(tape, params, ex)?;
        Ok((l.total, vec![l.prediction, l.hook]))
    };
    let mut params = std::mem::take(&mut model.params);
    optimize(
        &mut params,
        &train,
        cfg,
        &loss_fn,
        |epoch, params, means| {
            let token_acc = (!held.is_empty())
                .then(|| token_accuracy(params, &held))
                .transpose()?;
            curves.push(EpochMetrics {
                epoch,
                loss_pred: Some(means[0]),
                loss_hook: Some(means[1]),
                token_acc,
                tag_auc: None,
                loss_backward: None,
            });
            Ok(())
        },
    )?;
    model.params = params;
    Ok((model, curves))
}

/// Trains the backward model against gold tags with the gold summary as input.
pub fn train_backward(
    corpus: &[CorpusExample],
    vocab: &Vocab,
    hidden_dim: usize,
    cfg: &TrainConfig,
) -> Result<(BackwardModel, Vec<EpochMetrics>), TrainError> {
    let (train, held) = split_corpus(corpus);
    let (train, held) = (encode_corpus(train, vocab), encode_corpus(held, vocab));
    let mut model = BackwardModel::new(vocab.clone(), hidden_dim, cfg.seed)?;
    let mut curves = Vec::with_capacity(cfg.epochs);
    let loss_fn = |tape: &mut Tape, params: &ParamStore, ex: &EncodedExample| {
        let l = backward_model_loss(tape, params, ex)?;
        Ok((l, vec![l]))
    };
    let mut params = std::mem::take(&mut model.params);
    optimize(
        &mut params,
        &train,
        cfg,
        &loss_fn,
        |epoch, params, means| {
            let tag_auc = (!held.is_empty())
                .then(|| usage_auc(params, &held))
                .transpose()?;
            curves.push(EpochMetrics {
                epoch,
                loss_pred: None,
                loss_hook: None,
                token_acc: None,
                tag_auc,
                loss_backward: Some(means[0]),
            });
            Ok(())
        },
    )?;
    model.params = params;
    Ok((model, curves))
}

/// Exact-match next-token accuracy under teacher forcing of both the summary
/// tokens and the gold tags.
pub fn token_accuracy(params: &ParamStore, data: &[EncodedExample]) -> Result<f64, ModelError> {
    let counts: Vec<(usize, usize)> = data
        .par_iter()
        .map(|ex| -> Result<(usize, usize), ModelError> {
            let mut tape = Tape::new();
            let net = ForwardNet::bind(&mut tape, params)?;
            let enc = net.encode(&mut tape, &ex.source_ids)?;
            let steps = teacher_forced_steps(
                &mut tape,
                &net,
                &enc,
                &HookState::from_tags(&ex.tags),
                &ex.target_ids,
            )?;
            let hits = steps
                .iter()
                .zip(&ex.target_ids)
                .filter(|(s, &t)| argmax(tape.value(s.output_dist).data()) == t)
                .count();
            Ok((hits, ex.target_ids.len()))
        })
        .collect::<Result<_, _>>()?;
    let (hits, total) = counts.iter().fold((0, 0), |(h, t), (a, b)| (h + a, t + b));
    Ok(if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    })
}

/// ROC AUC of backward usage probabilities against gold tags, pooled over all words.
pub fn usage_auc(params: &ParamStore, data: &[EncodedExample]) -> Result<f64, ModelError> {
    let per_example: Vec<Vec<f64>> = data
        .par_iter()
        .map(|ex| -> Result<Vec<f64>, ModelError> {
            let mut tape = Tape::new();
            let probs = backward_usage(&mut tape, params, ex)?;
            Ok(tape.value(probs).data().to_vec())
        })
        .collect::<Result<_, _>>()?;
    let scores: Vec<f64> = per_example.into_iter().flatten().collect();
    let labels: Vec<u8> = data.iter().flat_map(|ex| ex.tags.iter().copied()).collect();
    Ok(roc_auc(&scores, &labels))
}

/// Copy mass assigned to forced-zero positions while regenerating each
/// held-out document with one sentence deselected; any nonzero mass counts
/// as one violation.
pub fn masking_violations(
    model: &SummarizerModel,
    held_out: &[CorpusExample],
) -> Result<usize, TrainError> {
    let counts: Vec<usize> = held_out
        .par_iter()
        .enumerate()
        .map(|(i, ex)| -> Result<usize, TrainError> {
            let doc = &ex.document;
            let skip = i % doc.n_sentences();
            let (a, b) = doc.sentence_spans[skip];
            let selection = (0..doc.len()).filter(|p| !(a..b).contains(p)).collect();
            let request = GenerationRequest::init_with(1).with_selection(selection);
            let result = generate(model, doc, &request)?;
            Ok(result
                .trace
                .rows
                .iter()
                .filter(|row| row.copy_mass[a..b].iter().any(|&m| m != 0.0))
                .count())
        })
        .collect::<Result<_, _>>()?;
    Ok(counts.iter().sum())
}

/// Held-out evaluation of a trained forward/backward pair.
pub fn evaluate(
    model: &SummarizerModel,
    backward: &BackwardModel,
    held_out: &[CorpusExample],
) -> Result<EvalReport, TrainError> {
    let fwd = encode_corpus(held_out, &model.vocab);
    let bwd = encode_corpus(held_out, &backward.vocab);
    Ok(EvalReport {
        token_accuracy: token_accuracy(&model.params, &fwd)?,
        tag_auc: usage_auc(&backward.params, &bwd)?,
        masking_violations: masking_violations(model, held_out)?,
        loss_curves: Vec::new(),
    })
}
