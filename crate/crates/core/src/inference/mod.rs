//! Constrained decoding in three modes (initialize, add one sentence,
//! complete a sentence) and exact inference for small discrete latents.

mod latent;

pub use latent::{lever_demo, lever_model, marginal, posterior, DiscreteLatentModel};

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    apply_prior, DecoderStepOutput, EncoderOutput, HookState, ModelError, SummarizerModel,
};
use crate::numerics::Tensor;
use crate::textproc::{is_terminator, Document, BOS, ELLIPSIS, EOS, PAD, UNK};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("invalid latent model: {0}")]
    InvalidLatentModel(String),
    #[error("unknown outcome '{0}'")]
    UnknownOutcome(String),
    #[error("unreachable outcome '{0}': marginal probability is zero")]
    UnreachableOutcome(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    InitWith,
    AddSentence,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub mode: Mode,
    /// Sentence count for [`Mode::InitWith`]; ignored otherwise.
    pub n_sentences: usize,
    /// Existing summary, teacher-forced as decoder context.
    pub prefix_summary: Vec<usize>,
    /// Start of the sentence to complete ([`Mode::Complete`] only).
    pub prefix_in_sentence: Vec<usize>,
    /// Selected source positions; `None` selects every word.
    pub selection: Option<BTreeSet<usize>>,
    pub beam_width: usize,
    pub seed: u64,
}

impl GenerationRequest {
    fn base(mode: Mode) -> Self {
        GenerationRequest {
            mode,
            n_sentences: 1,
            prefix_summary: Vec::new(),
            prefix_in_sentence: Vec::new(),
            selection: None,
            beam_width: 1,
            seed: 0,
        }
    }

    pub fn init_with(n_sentences: usize) -> Self {
        GenerationRequest {
            n_sentences,
            ..Self::base(Mode::InitWith)
        }
    }

    pub fn add_sentence(prefix_summary: Vec<usize>) -> Self {
        GenerationRequest {
            prefix_summary,
            ..Self::base(Mode::AddSentence)
        }
    }

    pub fn complete(prefix_summary: Vec<usize>, prefix_in_sentence: Vec<usize>) -> Self {
        GenerationRequest {
            prefix_summary,
            prefix_in_sentence,
            ..Self::base(Mode::Complete)
        }
    }

    pub fn with_selection(mut self, selection: BTreeSet<usize>) -> Self {
        self.selection = Some(selection);
        self
    }

    pub fn with_beam(mut self, beam_width: usize) -> Self {
        self.beam_width = beam_width;
        self
    }

    pub fn validate(&self, model: &SummarizerModel, doc_len: usize) -> Result<(), InferenceError> {
        let bad = |m: String| Err(InferenceError::InvalidRequest(m));
        let max = model.config.max_summary_sentences;
        if self.mode == Mode::InitWith && !(1..=max).contains(&self.n_sentences) {
            return bad(format!(
                "n_sentences must be in 1..={max}, got {}",
                self.n_sentences
            ));
        }
        if self.mode == Mode::Complete && self.prefix_in_sentence.is_empty() {
            return bad("COMPLETE needs a non-empty prefix_in_sentence".into());
        }
        if self.mode != Mode::Complete && !self.prefix_in_sentence.is_empty() {
            return bad("prefix_in_sentence is only valid for COMPLETE".into());
        }
        if self.beam_width == 0 {
            return bad("beam_width must be at least 1".into());
        }
        let v = model.vocab.len();
        if let Some(&t) = self
            .prefix_summary
            .iter()
            .chain(&self.prefix_in_sentence)
            .find(|&&t| t >= v)
        {
            return bad(format!("token id {t} outside vocabulary of size {v}"));
        }
        if let Some(&p) = self.selection.iter().flatten().find(|&&p| p >= doc_len) {
            return bad(format!(
                "selected position {p} outside document of length {doc_len}"
            ));
        }
        Ok(())
    }
}

/// Everything recorded about one output token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub token: usize,
    /// Raw attention over source positions.
    pub attention: Vec<f64>,
    /// Copy probability per source position, `(1 - switch) * copy`.
    pub copy_mass: Vec<f64>,
    pub switch: f64,
    /// Source position the token was copied from, when copying contributed
    /// more of its probability than generation did.
    pub copy_flag: Option<usize>,
    /// The token came from the request prefix rather than the decoder's choice.
    pub teacher_forced: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub rows: Vec<TraceRow>,
    /// Some sentence hit the per-sentence token budget before a terminator.
    pub truncated: bool,
    pub warnings: Vec<String>,
}

impl AttentionTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub sentences: Vec<Vec<usize>>,
    pub trace: AttentionTrace,
}

impl GenerationResult {
    pub fn copy_flags(&self) -> Vec<Option<usize>> {
        self.trace.rows.iter().map(|r| r.copy_flag).collect()
    }

    pub fn tokens(&self) -> Vec<usize> {
        self.sentences.concat()
    }
}

fn copy_flag(step: &DecoderStepOutput, source_ids: &[usize], token: usize) -> Option<usize> {
    if step.copy_support_empty {
        return None;
    }
    let mut best: Option<usize> = None;
    let mut via_copy = 0.0;
    for (i, (&id, &c)) in source_ids.iter().zip(&step.copy_dist).enumerate() {
        if id == token {
            via_copy += c;
            if c > 0.0 && best.is_none_or(|b| c > step.copy_dist[b]) {
                best = Some(i);
            }
        }
    }
    let via_copy = (1.0 - step.switch) * via_copy;
    let via_gen = step.switch * step.gen_dist[token];
    best.filter(|_| via_copy > via_gen)
}

fn trace_row(
    step: &DecoderStepOutput,
    source_ids: &[usize],
    token: usize,
    teacher_forced: bool,
) -> TraceRow {
    let keep = 1.0 - step.switch;
    TraceRow {
        token,
        attention: step.attention.clone(),
        copy_mass: step.copy_dist.iter().map(|c| keep * c).collect(),
        switch: step.switch,
        copy_flag: copy_flag(step, source_ids, token),
        teacher_forced,
    }
}

struct Decoder<'a> {
    model: &'a SummarizerModel,
    enc: EncoderOutput,
    hook: HookState,
    allowed: Vec<bool>,
    terminators: Vec<bool>,
    target_sentences: usize,
    max_tokens: usize,
}

#[derive(Clone)]
struct Hypothesis {
    sentences: Vec<Vec<usize>>,
    current: Vec<usize>,
    rows: Vec<TraceRow>,
    score: f64,
    state: Tensor,
    prev: usize,
    truncated: bool,
}

impl Hypothesis {
    fn done(&self, target: usize) -> bool {
        self.sentences.len() >= target
    }
}

impl Decoder<'_> {
    fn step(&self, hyp: &Hypothesis) -> Result<DecoderStepOutput, ModelError> {
        self.model
            .decode_step(&self.enc, &self.hook, hyp.prev, &hyp.state)
    }

    /// Appends `token`, closing the sentence on a terminator or when the budget is spent.
    fn push(&self, hyp: &mut Hypothesis, step: DecoderStepOutput, token: usize, forced: bool) {
        hyp.rows
            .push(trace_row(&step, &self.enc.source_ids, token, forced));
        hyp.state = step.state;
        hyp.prev = token;
        hyp.current.push(token);
        let terminated = self.terminators[token];
        if terminated || hyp.current.len() >= self.max_tokens {
            hyp.truncated |= !terminated;
            hyp.sentences.push(std::mem::take(&mut hyp.current));
        }
    }

    /// Allowed tokens with their log-probabilities, best first; ties go to the lower id.
    fn ranked(&self, step: &DecoderStepOutput) -> Vec<(usize, f64)> {
        let mut cands: Vec<(usize, f64)> = step
            .output_dist
            .iter()
            .enumerate()
            .filter(|(t, _)| self.allowed[*t])
            .map(|(t, p)| (t, p.ln()))
            .collect();
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cands
    }

    fn greedy(&self, mut hyp: Hypothesis) -> Result<Hypothesis, ModelError> {
        while !hyp.done(self.target_sentences) {
            let step = self.step(&hyp)?;
            let mut best: Option<(usize, f64)> = None;
            for (t, p) in step.output_dist.iter().enumerate() {
                let lp = p.ln();
                if self.allowed[t] && best.is_none_or(|(_, b)| lp > b) {
                    best = Some((t, lp));
                }
            }
            let (token, lp) = best.expect("vocabulary has generatable tokens");
            hyp.score += lp;
            self.push(&mut hyp, step, token, false);
        }
        Ok(hyp)
    }

    fn beam(&self, start: Hypothesis, width: usize) -> Result<Hypothesis, ModelError> {
        if start.done(self.target_sentences) {
            return Ok(start);
        }
        let mut live = vec![start];
        let mut finished: Vec<Hypothesis> = Vec::new();
        while !live.is_empty() && finished.len() < width {
            let mut pool: Vec<(f64, usize, usize)> = Vec::new();
            let mut steps = Vec::with_capacity(live.len());
            for (h, hyp) in live.iter().enumerate() {
                let step = self.step(hyp)?;
                pool.extend(
                    self.ranked(&step)
                        .into_iter()
                        .take(width)
                        .map(|(t, lp)| (hyp.score + lp, h, t)),
                );
                steps.push(step);
            }
            pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(width);
            for &(score, h, t) in pool.iter().take(width - finished.len()) {
                let mut hyp = live[h].clone();
                hyp.score = score;
                self.push(&mut hyp, steps[h].clone(), t, false);
                if hyp.done(self.target_sentences) {
                    finished.push(hyp);
                } else {
                    next.push(hyp);
                }
            }
            live = next;
        }
        // Stable sort keeps the earliest-finished hypothesis on equal scores.
        finished.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
        Ok(finished
            .into_iter()
            .next()
            .expect("beam search finishes at least one hypothesis"))
    }
}

/// Generates summary text for `document` under the request's mode and
/// selection. Deselected words have their hook forced to zero, so the copy
/// distribution never puts mass on them.
pub fn generate(
    model: &SummarizerModel,
    document: &Document,
    request: &GenerationRequest,
) -> Result<GenerationResult, InferenceError> {
    decode(model, document, request, request.beam_width > 1)
}

fn decode(
    model: &SummarizerModel,
    document: &Document,
    request: &GenerationRequest,
    use_beam: bool,
) -> Result<GenerationResult, InferenceError> {
    request.validate(model, document.len())?;
    let source_ids = model.vocab.encode(&document.tokens);
    let enc = model.encode(&source_ids)?;
    let probs = model.hook_forward(&enc)?;
    let deselected: Vec<usize> = match &request.selection {
        None => Vec::new(),
        Some(sel) => (0..document.len()).filter(|p| !sel.contains(p)).collect(),
    };
    let hook = apply_prior(&probs, &deselected)?;
    let mut warnings = Vec::new();
    if hook.support().iter().all(|s| !s) {
        log::warn!("copy support is empty; generating without copying");
        warnings.push(
            "copy support is empty: every word is deselected, output is generated only".to_string(),
        );
    }

    let vocab = &model.vocab;
    let mut allowed = vec![true; vocab.len()];
    for id in [PAD, BOS, EOS, UNK, ELLIPSIS] {
        allowed[id] = false;
    }
    let terminators = (0..vocab.len())
        .map(|id| is_terminator(vocab.token(id)))
        .collect();
    let decoder = Decoder {
        model,
        target_sentences: if request.mode == Mode::InitWith {
            request.n_sentences
        } else {
            1
        },
        max_tokens: model.config.max_tokens_per_sentence,
        allowed,
        terminators,
        enc,
        hook,
    };

    let mut hyp = Hypothesis {
        sentences: Vec::new(),
        current: Vec::new(),
        rows: Vec::new(),
        score: 0.0,
        state: model.initial_state(&decoder.enc),
        prev: BOS,
        truncated: false,
    };
    for &t in &request.prefix_summary {
        let step = decoder.step(&hyp)?;
        hyp.state = step.state;
        hyp.prev = t;
    }
    for &t in &request.prefix_in_sentence {
        if hyp.done(1) {
            return Err(InferenceError::InvalidRequest(
                "prefix_in_sentence spans more than one sentence".to_string(),
            ));
        }
        let step = decoder.step(&hyp)?;
        decoder.push(&mut hyp, step, t, true);
    }

    let hyp = if use_beam {
        decoder.beam(hyp, request.beam_width)?
    } else {
        decoder.greedy(hyp)?
    };
    if hyp.truncated {
        warnings.push(format!(
            "a sentence reached the {} token budget without a terminator",
            decoder.max_tokens
        ));
    }
    Ok(GenerationResult {
        sentences: hyp.sentences,
        trace: AttentionTrace {
            rows: hyp.rows,
            truncated: hyp.truncated,
            warnings,
        },
    })
}
