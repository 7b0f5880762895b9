//! Prediction network and hook network.
//!
//! A GRU encoder reads the source; the hook network maps every encoder state
//! to the probability that the word may be copied. A GRU decoder attends over
//! the encoder states and mixes a vocabulary distribution with a copy
//! distribution whose support is gated by the hook values: a word whose
//! effective hook value is exactly zero can never receive copy mass, and
//! values strictly between zero and one scale the copy score by their log.

mod gru;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use gru::{gaussian, init as gru_init, Gru};

use crate::numerics::{checkpoint, kernels, NumericsError, ParamStore, Prng, Tape, Tensor, Var};
use crate::textproc::{TextError, Vocab};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("position {pos} out of range for {len} source tokens")]
    OutOfRange { pos: usize, len: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Width of every contextual vector.
    pub hidden_dim: usize,
    pub max_summary_sentences: usize,
    pub max_tokens_per_sentence: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, hidden_dim: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: hidden_dim,
            hidden_dim,
            max_summary_sentences: 3,
            max_tokens_per_sentence: 20,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size < 5 {
            return Err(ModelError::Config(format!(
                "vocab_size {} leaves no room for reserved ids",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_tokens_per_sentence == 0 {
            return Err(ModelError::Config(
                "all dimensions must be at least 1".into(),
            ));
        }
        if self.max_summary_sentences == 0 {
            return Err(ModelError::Config(
                "max_summary_sentences must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Whether the user left a word free or forced its hook prior to zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Prior {
    Free,
    ForcedZero,
}

/// Per-word copyability: model probabilities, user prior, and the effective
/// value the decoder gates on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HookState {
    pub model_probs: Vec<f64>,
    pub prior: Vec<Prior>,
    pub effective: Vec<f64>,
}

impl HookState {
    /// All-free hook state whose effective values are `probs` verbatim.
    pub fn free(probs: Vec<f64>) -> Self {
        let prior = vec![Prior::Free; probs.len()];
        HookState {
            effective: probs.clone(),
            model_probs: probs,
            prior,
        }
    }

    /// Gold 0/1 tags used as effective values (teacher forcing of the latent).
    pub fn from_tags(tags: &[u8]) -> Self {
        Self::free(tags.iter().map(|&t| f64::from(t)).collect())
    }

    pub fn len(&self) -> usize {
        self.model_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_probs.is_empty()
    }

    /// Positions with any copy support.
    pub fn support(&self) -> Vec<bool> {
        self.effective.iter().map(|&e| e > 0.0).collect()
    }

    pub fn is_forced_zero(&self, pos: usize) -> bool {
        self.prior.get(pos) == Some(&Prior::ForcedZero)
    }
}

/// Forces the prior of every listed position to zero.
pub fn apply_prior(model_probs: &[f64], deselected: &[usize]) -> Result<HookState, ModelError> {
    let n = model_probs.len();
    let mut prior = vec![Prior::Free; n];
    for &pos in deselected {
        if pos >= n {
            return Err(ModelError::OutOfRange { pos, len: n });
        }
        prior[pos] = Prior::ForcedZero;
    }
    let effective = model_probs
        .iter()
        .zip(&prior)
        .map(|(&p, pr)| if *pr == Prior::ForcedZero { 0.0 } else { p })
        .collect();
    Ok(HookState {
        model_probs: model_probs.to_vec(),
        prior,
        effective,
    })
}

/// Encoder states as plain tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    /// `[n, hidden_dim]`
    pub states: Tensor,
    /// `[hidden_dim]`
    pub final_state: Tensor,
    /// Vocabulary ids of the source tokens, used to place copy mass.
    pub source_ids: Vec<usize>,
}

/// Everything one decoder step produced, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStepOutput {
    pub attention: Vec<f64>,
    /// All zeros when the copy support is empty.
    pub copy_dist: Vec<f64>,
    pub gen_dist: Vec<f64>,
    pub switch: f64,
    pub output_dist: Vec<f64>,
    pub state: Tensor,
    pub copy_support_empty: bool,
}

/// The forward model: configuration, vocabulary and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SummarizerModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
}

impl SummarizerModel {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(ModelError::Config(format!(
                "vocab has {} entries, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let params = init_params(&config, seed)?;
        Ok(SummarizerModel {
            config,
            vocab,
            params,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Vec<u8>, ModelError> {
        let cfg =
            serde_json::json!({ "kind": "forward", "model": self.config, "vocab": self.vocab });
        Ok(checkpoint::encode(&self.params, &cfg)?)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, ModelError> {
        let (params, cfg) = checkpoint::decode(bytes)?;
        if cfg["kind"] != "forward" {
            return Err(ModelError::Checkpoint(
                "not a forward-model checkpoint".into(),
            ));
        }
        let config: ModelConfig = serde_json::from_value(cfg["model"].clone())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let vocab: Vocab = serde_json::from_value(cfg["vocab"].clone())
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let expected = init_params(&config, 0)?;
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => {
                    return Err(ModelError::Checkpoint(format!(
                        "missing or misshaped parameter '{name}'"
                    )))
                }
            }
        }
        Ok(SummarizerModel {
            config,
            vocab,
            params,
        })
    }

    /// Runs the encoder over `token_ids`.
    pub fn encode(&self, token_ids: &[usize]) -> Result<EncoderOutput, ModelError> {
        let mut tape = Tape::new();
        let net = ForwardNet::bind(&mut tape, &self.params)?;
        let enc = net.encode(&mut tape, token_ids)?;
        let final_state = tape
            .value(enc.final_state)
            .reshaped(vec![self.config.hidden_dim])?;
        Ok(EncoderOutput {
            states: tape.value(enc.states).clone(),
            final_state,
            source_ids: enc.source_ids,
        })
    }

    /// Per-token copy probabilities `p(t_i | x)`.
    pub fn hook_forward(&self, encoder_output: &EncoderOutput) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let net = ForwardNet::bind(&mut tape, &self.params)?;
        let states = tape.constant(encoder_output.states.clone())?;
        let probs = net.hook(&mut tape, states)?;
        Ok(tape.value(probs).data().to_vec())
    }

    /// One decoder step from `prev_state` (`[hidden_dim]` or `[1, hidden_dim]`).
    pub fn decode_step(
        &self,
        encoder_output: &EncoderOutput,
        hook: &HookState,
        prev_token: usize,
        prev_state: &Tensor,
    ) -> Result<DecoderStepOutput, ModelError> {
        let mut tape = Tape::new();
        let net = ForwardNet::bind(&mut tape, &self.params)?;
        let enc = Encoded::from_output(&mut tape, encoder_output)?;
        let state = tape.constant(prev_state.reshaped(vec![1, self.config.hidden_dim])?)?;
        let step = net.step(&mut tape, &enc, hook, prev_token, state)?;
        Ok(step.read(&tape))
    }

    /// Decoder start state for an encoded source.
    pub fn initial_state(&self, encoder_output: &EncoderOutput) -> Tensor {
        encoder_output.final_state.clone()
    }
}

fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore, ModelError> {
    let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
    let mut prng = Prng::new(seed);
    let mut store = ParamStore::new();
    store.insert(
        "embed",
        gaussian(&mut prng, &[v, e], 1.0 / (e as f64).sqrt()),
    )?;
    gru::init(&mut store, "enc", e, h, &mut prng)?;
    gru::init(&mut store, "dec", e, h, &mut prng)?;
    store.insert(
        "attn.proj",
        gaussian(&mut prng, &[h, h], 1.0 / (h as f64).sqrt()),
    )?;
    store.insert(
        "out.w",
        gaussian(&mut prng, &[2 * h, v], 1.0 / (2.0 * h as f64).sqrt()),
    )?;
    store.insert("out.b", Tensor::zeros(&[1, v]))?;
    store.insert(
        "switch.w",
        gaussian(&mut prng, &[2 * h, 1], 1.0 / (2.0 * h as f64).sqrt()),
    )?;
    store.insert("switch.b", Tensor::zeros(&[1, 1]))?;
    store.insert(
        "hook.w",
        gaussian(&mut prng, &[h, 1], 1.0 / (h as f64).sqrt()),
    )?;
    store.insert("hook.b", Tensor::zeros(&[1, 1]))?;
    Ok(store)
}

/// Source encoding living on a tape.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[n, hidden]`
    pub states: Var,
    /// `[hidden, n]`, cached for attention scores.
    pub states_t: Var,
    /// `[1, hidden]`
    pub final_state: Var,
    pub source_ids: Vec<usize>,
}

impl Encoded {
    fn from_output(tape: &mut Tape, out: &EncoderOutput) -> Result<Self, ModelError> {
        let states = tape.constant(out.states.clone())?;
        let states_t = tape.transpose(states)?;
        let h = out.final_state.numel();
        let final_state = tape.constant(out.final_state.reshaped(vec![1, h])?)?;
        Ok(Encoded {
            states,
            states_t,
            final_state,
            source_ids: out.source_ids.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }
}

/// Tape handles of one decoder step.
#[derive(Clone, Debug)]
pub struct StepVars {
    pub attention: Var,
    pub copy_dist: Option<Var>,
    pub gen_dist: Var,
    pub switch: Option<Var>,
    pub output_dist: Var,
    pub state: Var,
}

impl StepVars {
    pub fn read(&self, tape: &Tape) -> DecoderStepOutput {
        let attention = tape.value(self.attention).data().to_vec();
        let gen_dist = tape.value(self.gen_dist).data().to_vec();
        let copy_dist = match self.copy_dist {
            Some(c) => tape.value(c).data().to_vec(),
            None => vec![0.0; attention.len()],
        };
        let switch = self.switch.map(|s| tape.value(s).data()[0]).unwrap_or(1.0);
        let state = tape.value(self.state).clone();
        let state = state
            .reshaped(vec![state.numel()])
            .expect("same element count");
        DecoderStepOutput {
            attention,
            copy_dist,
            gen_dist,
            switch,
            output_dist: tape.value(self.output_dist).data().to_vec(),
            state,
            copy_support_empty: self.copy_dist.is_none(),
        }
    }
}

/// Forward-model weights bound to a tape.
#[derive(Clone, Debug)]
pub struct ForwardNet {
    embed: Var,
    enc: Gru,
    dec: Gru,
    attn_proj: Var,
    out_w: Var,
    out_b: Var,
    switch_w: Var,
    switch_b: Var,
    hook_w: Var,
    hook_b: Var,
    vocab_size: usize,
}

impl ForwardNet {
    pub fn bind(tape: &mut Tape, params: &ParamStore) -> Result<Self, ModelError> {
        let embed = tape.param(params, "embed")?;
        let vocab_size = tape.value(embed).shape()[0];
        Ok(ForwardNet {
            embed,
            enc: Gru::bind(tape, params, "enc")?,
            dec: Gru::bind(tape, params, "dec")?,
            attn_proj: tape.param(params, "attn.proj")?,
            out_w: tape.param(params, "out.w")?,
            out_b: tape.param(params, "out.b")?,
            switch_w: tape.param(params, "switch.w")?,
            switch_b: tape.param(params, "switch.b")?,
            hook_w: tape.param(params, "hook.w")?,
            hook_b: tape.param(params, "hook.b")?,
            vocab_size,
        })
    }

    pub fn hidden_dim(&self, tape: &Tape) -> usize {
        tape.value(self.attn_proj).shape()[0]
    }

    pub fn encode(&self, tape: &mut Tape, token_ids: &[usize]) -> Result<Encoded, ModelError> {
        if token_ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let x = tape.embedding(self.embed, token_ids)?;
        let h0 = tape.constant(Tensor::zeros(&[1, self.hidden_dim(tape)]))?;
        let (states, final_state) = self.enc.run(tape, x, h0)?;
        let states_t = tape.transpose(states)?;
        Ok(Encoded {
            states,
            states_t,
            final_state,
            source_ids: token_ids.to_vec(),
        })
    }

    /// `[n, 1]` sigmoid probabilities of a learned linear map of each state.
    pub fn hook(&self, tape: &mut Tape, states: Var) -> Result<Var, ModelError> {
        let logits = tape.matmul(states, self.hook_w)?;
        let logits = tape.add(logits, self.hook_b)?;
        Ok(tape.sigmoid(logits)?)
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        hook: &HookState,
        prev_token: usize,
        prev_state: Var,
    ) -> Result<StepVars, ModelError> {
        let n = enc.len();
        if hook.len() != n {
            return Err(ModelError::LengthMismatch {
                expected: n,
                got: hook.len(),
            });
        }
        let x = tape.embedding(self.embed, &[prev_token])?;
        let state = self.dec.step(tape, x, prev_state)?;

        let query = tape.matmul(state, self.attn_proj)?;
        let scores = tape.matmul(query, enc.states_t)?;
        let attention = tape.softmax(scores, 1)?;
        let context = tape.matmul(attention, enc.states)?;
        let features = tape.concat(&[state, context], 1)?;

        let logits = tape.matmul(features, self.out_w)?;
        let logits = tape.add(logits, self.out_b)?;
        let gen_dist = tape.softmax(logits, 1)?;

        let support = hook.support();
        if !support.iter().any(|&s| s) {
            log::warn!("copy support is empty; decoding from the vocabulary distribution only");
            return Ok(StepVars {
                attention,
                copy_dist: None,
                gen_dist,
                switch: None,
                output_dist: gen_dist,
                state,
            });
        }

        let copy_scores = if hook.effective.iter().all(|&e| e == 0.0 || e == 1.0) {
            scores
        } else {
            let bias: Vec<f64> = hook
                .effective
                .iter()
                .map(|&e| if e > 0.0 { e.ln() } else { 0.0 })
                .collect();
            let bias = tape.constant(Tensor::row(bias))?;
            tape.add(scores, bias)?
        };
        let copy_dist = tape.masked_softmax(copy_scores, 1, support)?;

        let sw = tape.matmul(features, self.switch_w)?;
        let sw = tape.add(sw, self.switch_b)?;
        let switch = tape.sigmoid(sw)?;

        let gen_part = tape.scale_by(gen_dist, switch)?;
        let copy_vocab = tape.scatter_add(copy_dist, &enc.source_ids, self.vocab_size)?;
        let copy_weight = tape.affine(switch, -1.0, 1.0)?;
        let copy_part = tape.scale_by(copy_vocab, copy_weight)?;
        let output_dist = tape.add(gen_part, copy_part)?;

        Ok(StepVars {
            attention,
            copy_dist: Some(copy_dist),
            gen_dist,
            switch: Some(switch),
            output_dist,
            state,
        })
    }
}

/// Recombines a step's recorded parts without the tape:
/// `switch * gen + (1 - switch) * scatter(copy)`.
pub fn recombine(step: &DecoderStepOutput, source_ids: &[usize]) -> Result<Vec<f64>, ModelError> {
    if step.copy_support_empty {
        return Ok(step.gen_dist.clone());
    }
    let copy = kernels::scatter_add(
        &Tensor::vector(step.copy_dist.clone()),
        source_ids,
        step.gen_dist.len(),
    )?;
    Ok(step
        .gen_dist
        .iter()
        .zip(copy.data())
        .map(|(g, c)| step.switch * g + (1.0 - step.switch) * c)
        .collect())
}

#[cfg(test)]
mod tests;
