//! Backward attribution: which source words did a summary use?
//!
//! Both the source and the summary are contextualized by this model's own
//! GRU encoder. Each source vector attends over the summary vectors, the
//! attention-weighted summary vector becomes its context, and a one-hidden-layer
//! scorer turns `[source vector, context]` into a usage probability. The model
//! never touches the forward model's weights or decoder state, so it can score
//! any summary, including one the user typed.

use serde::{Deserialize, Serialize};

use crate::model::{gaussian, Gru, ModelError};
use crate::numerics::{checkpoint, kernels, NumericsError, ParamStore, Prng, Tape, Tensor, Var};
use crate::textproc::{Document, Vocab, BOS};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-source-word usage with the derived covered sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub usage_probs: Vec<f64>,
    pub covered_words: Vec<usize>,
    pub covered_sentences: Vec<usize>,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl CoverageReport {
    /// Derives the covered sets from `usage_probs` at `threshold`.
    pub fn from_usage(document: &Document, usage_probs: Vec<f64>, threshold: f64) -> Self {
        let covered_words: Vec<usize> = (0..usage_probs.len())
            .filter(|&i| usage_probs[i] >= threshold)
            .collect();
        let covered_sentences = document
            .sentence_spans
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| (s..e).any(|i| usage_probs[i] >= threshold))
            .map(|(idx, _)| idx)
            .collect();
        CoverageReport {
            usage_probs,
            covered_words,
            covered_sentences,
            threshold,
            warning: None,
        }
    }

    /// Sentence whose most-used word has the highest usage (lowest index on ties).
    pub fn argmax_sentence(&self, document: &Document) -> Option<usize> {
        let scores: Vec<f64> = document
            .sentence_spans
            .iter()
            .map(|&(s, e)| {
                self.usage_probs[s..e]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        (!scores.is_empty()).then(|| crate::training::argmax(&scores))
    }
}

/// Scorer weights of the backward model as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardWeights {
    /// `[d_hid, 2 d_hid]`
    pub w1: Tensor,
    /// `[1, d_hid]`
    pub w2: Tensor,
    /// `[d_hid]`
    pub b1: Tensor,
    pub b2: f64,
}

impl BackwardWeights {
    pub fn from_params(params: &ParamStore) -> Result<Self, ModelError> {
        let get = |n: &str| {
            params
                .get(n)
                .cloned()
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter '{n}'")))
        };
        Ok(BackwardWeights {
            w1: get("bwd.w1")?,
            w2: get("bwd.w2")?,
            b1: get("bwd.b1")?,
            b2: get("bwd.b2")?.item()?,
        })
    }
}

/// Attention weights of one source vector over the summary vectors:
/// softmax of the dot products.
pub fn usage_attention(
    source_vector: &[f64],
    summary_vectors: &Tensor,
) -> Result<Vec<f64>, ModelError> {
    let (m, d) = summary_vectors.dims2()?;
    if d != source_vector.len() {
        return Err(ModelError::LengthMismatch {
            expected: d,
            got: source_vector.len(),
        });
    }
    let scores: Vec<f64> = (0..m)
        .map(|k| {
            summary_vectors
                .row_slice(k)
                .iter()
                .zip(source_vector)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    Ok(kernels::softmax(&Tensor::vector(scores), 0)?.into_data())
}

/// `Σ_k weights[k] · summary_vectors[k]`.
pub fn context_vector(weights: &[f64], summary_vectors: &Tensor) -> Result<Vec<f64>, ModelError> {
    let (m, d) = summary_vectors.dims2()?;
    if weights.len() != m {
        return Err(ModelError::LengthMismatch {
            expected: m,
            got: weights.len(),
        });
    }
    let mut c = vec![0.0; d];
    for (k, &a) in weights.iter().enumerate() {
        for (ci, &y) in c.iter_mut().zip(summary_vectors.row_slice(k)) {
            *ci += a * y;
        }
    }
    Ok(c)
}

/// `σ(W2 · tanh(W1 · [x; c] + b1) + b2)`.
pub fn usage_prob(
    source_vector: &[f64],
    context: &[f64],
    weights: &BackwardWeights,
) -> Result<f64, ModelError> {
    let d = weights.b1.numel();
    if source_vector.len() != d || context.len() != d {
        return Err(ModelError::LengthMismatch {
            expected: d,
            got: source_vector.len().min(context.len()),
        });
    }
    let joined: Vec<f64> = source_vector.iter().chain(context).copied().collect();
    let mut out = weights.b2;
    for r in 0..d {
        let pre: f64 = weights
            .w1
            .row_slice(r)
            .iter()
            .zip(&joined)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + weights.b1.data()[r];
        out += weights.w2.data()[r] * pre.tanh();
    }
    Ok(kernels::sigmoid_scalar(out))
}

/// Backward-model weights bound to a tape.
#[derive(Clone, Debug)]
pub struct BackwardNet {
    embed: Var,
    enc: Gru,
    w1_t: Var,
    w2_t: Var,
    b1: Var,
    b2: Var,
    hidden: usize,
}

impl BackwardNet {
    pub fn bind(tape: &mut Tape, params: &ParamStore) -> Result<Self, ModelError> {
        let embed = tape.param(params, "bwd.embed")?;
        let enc = Gru::bind(tape, params, "bwd.enc")?;
        let w1 = tape.param(params, "bwd.w1")?;
        let hidden = tape.value(w1).shape()[0];
        let w1_t = tape.transpose(w1)?;
        let w2 = tape.param(params, "bwd.w2")?;
        let w2_t = tape.transpose(w2)?;
        let b1 = tape.param(params, "bwd.b1")?;
        let b1 = tape.reshape(b1, &[1, hidden])?;
        let b2 = tape.param(params, "bwd.b2")?;
        let b2 = tape.reshape(b2, &[1, 1])?;
        Ok(BackwardNet {
            embed,
            enc,
            w1_t,
            w2_t,
            b1,
            b2,
            hidden,
        })
    }

    /// `[len, d_hid]` contextual vectors.
    pub fn contextualize(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let x = tape.embedding(self.embed, ids)?;
        let h0 = tape.constant(Tensor::zeros(&[1, self.hidden]))?;
        Ok(self.enc.run(tape, x, h0)?.0)
    }

    /// `[n, 1]` usage probabilities for source vectors `x` against summary vectors `y`.
    pub fn usage(&self, tape: &mut Tape, x: Var, y: Var) -> Result<Var, ModelError> {
        let y_t = tape.transpose(y)?;
        let scores = tape.matmul(x, y_t)?;
        let attn = tape.softmax(scores, 1)?;
        let ctx = tape.matmul(attn, y)?;
        let joined = tape.concat(&[x, ctx], 1)?;
        let pre = tape.matmul(joined, self.w1_t)?;
        let pre = tape.add(pre, self.b1)?;
        let hid = tape.tanh(pre)?;
        let logit = tape.matmul(hid, self.w2_t)?;
        let logit = tape.add(logit, self.b2)?;
        Ok(tape.sigmoid(logit)?)
    }
}

/// The backward model: vocabulary plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardModel {
    pub hidden_dim: usize,
    pub vocab: Vocab,
    pub params: ParamStore,
}

impl BackwardModel {
    pub fn new(vocab: Vocab, hidden_dim: usize, seed: u64) -> Result<Self, ModelError> {
        if hidden_dim == 0 {
            return Err(ModelError::Config("hidden_dim must be at least 1".into()));
        }
        let params = init_params(vocab.len(), hidden_dim, seed)?;
        Ok(BackwardModel {
            hidden_dim,
            vocab,
            params,
        })
    }

    pub fn weights(&self) -> Result<BackwardWeights, ModelError> {
        BackwardWeights::from_params(&self.params)
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>, ModelError> {
        let cfg = serde_json::json!({ "kind": "backward", "hidden_dim": self.hidden_dim, "vocab": self.vocab });
        Ok(checkpoint::encode(&self.params, &cfg)?)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, ModelError> {
        let (params, cfg) = checkpoint::decode(bytes)?;
        if cfg["kind"] != "backward" {
            return Err(ModelError::Checkpoint(
                "not a backward-model checkpoint".into(),
            ));
        }
        let hidden_dim = cfg["hidden_dim"]
            .as_u64()
            .ok_or_else(|| ModelError::Checkpoint("missing hidden_dim".into()))?
            as usize;
        let vocab: Vocab = serde_json::from_value(cfg["vocab"].clone())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        for (name, t) in init_params(vocab.len(), hidden_dim, 0)?.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => {
                    return Err(ModelError::Checkpoint(format!(
                        "missing or misshaped parameter '{name}'"
                    )))
                }
            }
        }
        Ok(BackwardModel {
            hidden_dim,
            vocab,
            params,
        })
    }

    /// `[len, d_hid]` contextual vectors for `tokens`.
    pub fn contextualize<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let net = BackwardNet::bind(&mut tape, &self.params)?;
        let v = net.contextualize(&mut tape, &self.vocab.encode(tokens))?;
        Ok(tape.value(v).clone())
    }

    /// Usage probabilities for every source word. An empty summary is scored
    /// against a single start-of-sequence vector and flagged in `warning`.
    pub fn attribute<S: AsRef<str>>(
        &self,
        document: &Document,
        summary_tokens: &[S],
        threshold: f64,
    ) -> Result<CoverageReport, ModelError> {
        if document.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let mut summary_ids = self.vocab.encode(summary_tokens);
        let warning = summary_ids.is_empty().then(|| {
            summary_ids.push(BOS);
            "empty summary: usage computed against a start-of-sequence vector".to_string()
        });
        let mut tape = Tape::new();
        let net = BackwardNet::bind(&mut tape, &self.params)?;
        let x = net.contextualize(&mut tape, &self.vocab.encode(&document.tokens))?;
        let y = net.contextualize(&mut tape, &summary_ids)?;
        let probs = net.usage(&mut tape, x, y)?;
        let mut report =
            CoverageReport::from_usage(document, tape.value(probs).data().to_vec(), threshold);
        report.warning = warning;
        Ok(report)
    }
}

fn init_params(vocab_size: usize, h: usize, seed: u64) -> Result<ParamStore, NumericsError> {
    let mut prng = Prng::new(seed);
    let mut store = ParamStore::new();
    store.insert(
        "bwd.embed",
        gaussian(&mut prng, &[vocab_size, h], 1.0 / (h as f64).sqrt()),
    )?;
    crate::model::gru_init(&mut store, "bwd.enc", h, h, &mut prng)?;
    store.insert(
        "bwd.w1",
        gaussian(&mut prng, &[h, 2 * h], 1.0 / (2.0 * h as f64).sqrt()),
    )?;
    store.insert(
        "bwd.w2",
        gaussian(&mut prng, &[1, h], 1.0 / (h as f64).sqrt()),
    )?;
    store.insert("bwd.b1", Tensor::zeros(&[h]))?;
    store.insert("bwd.b2", Tensor::zeros(&[1]))?;
    Ok(store)
}
