//! Collaborative state shared between a user and the two models: source
//! selection, summary draft with per-token provenance, coverage from the
//! backward model, and the sentence-level attention graph.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backward::{BackwardModel, CoverageReport, DEFAULT_THRESHOLD};
use crate::inference::{generate, GenerationRequest, InferenceError, Mode, TraceRow};
use crate::model::{ModelError, SummarizerModel};
use crate::textproc::{split_sentences, tokenize, Document, ELLIPSIS_TOKEN};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{what} index {index} out of range (have {len})")]
    InvalidIndex {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("no backward result yet: run a generation or edit first")]
    NoBackwardResult,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Origin {
    Model,
    User,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Template {
    All,
    None,
    Match,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Create,
    Select,
    Forward,
    Backward,
    Edit,
    Delete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub seq: usize,
    pub kind: EventKind,
    pub detail: String,
}

/// One summary token with its provenance. `trace` holds the decoder record
/// while the token is still the one the model produced.
#[derive(Clone, Debug, PartialEq)]
struct SummaryToken {
    text: String,
    by_user: bool,
    trace: Option<TraceRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummarySentence {
    tokens: Vec<SummaryToken>,
}

impl SummarySentence {
    pub fn tokens(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }

    pub fn origin(&self) -> Origin {
        let users = self.tokens.iter().filter(|t| t.by_user).count();
        match users {
            0 => Origin::Model,
            n if n == self.tokens.len() => Origin::User,
            _ => Origin::Mixed,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A surviving decoder record located in the summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub sentence: usize,
    pub position: usize,
    pub token: String,
    pub attention: Vec<f64>,
    pub copy_flag: Option<usize>,
}

/// Parameters of a forward action on a session.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardRequest {
    pub mode: Mode,
    pub n_sentences: usize,
    /// Text typed before the ellipsis, for [`Mode::Complete`].
    pub prefix: Option<String>,
    pub beam_width: usize,
}

impl ForwardRequest {
    pub fn init_with(n_sentences: usize) -> Self {
        ForwardRequest {
            mode: Mode::InitWith,
            n_sentences,
            prefix: None,
            beam_width: 1,
        }
    }

    pub fn add_sentence() -> Self {
        ForwardRequest {
            mode: Mode::AddSentence,
            n_sentences: 1,
            prefix: None,
            beam_width: 1,
        }
    }

    pub fn complete(prefix: &str) -> Self {
        ForwardRequest {
            mode: Mode::Complete,
            n_sentences: 1,
            prefix: Some(prefix.to_string()),
            beam_width: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub id: String,
    pub document: Document,
    /// Selected sentence indices.
    pub selection: BTreeSet<usize>,
    /// Word-level selection; only used while aggregation is off.
    pub word_selection: Option<BTreeSet<usize>>,
    pub aggregate: bool,
    pub threshold: f64,
    pub coverage: Option<CoverageReport>,
    summary: Vec<SummarySentence>,
    history: Vec<HistoryEvent>,
}

/// Sums attention mass per (source sentence, output sentence).
/// `attention[k]` is the source distribution of the k-th traced token and
/// `output_spans` groups consecutive traced tokens into output sentences.
pub fn aggregate_attention(
    attention: &[Vec<f64>],
    sentence_spans: &[(usize, usize)],
    output_spans: &[(usize, usize)],
) -> Vec<Vec<f64>> {
    let mut matrix = vec![vec![0.0; output_spans.len()]; sentence_spans.len()];
    for (o, &(start, end)) in output_spans.iter().enumerate() {
        for row in &attention[start..end] {
            for (s, &(a, b)) in sentence_spans.iter().enumerate() {
                matrix[s][o] += row[a..b].iter().sum::<f64>();
            }
        }
    }
    matrix
}

/// Index pairs of a longest common subsequence of `a` and `b`.
fn lcs_pairs(a: &[String], b: &[String]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut table = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i][j] = if a[i] == b[j] {
                table[i + 1][j + 1] + 1
            } else {
                table[i + 1][j].max(table[i][j + 1])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut pairs = Vec::new();
    while i < n && j < m {
        if a[i] == b[j] {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if table[i + 1][j] >= table[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    pairs
}

impl Session {
    pub fn new(id: impl Into<String>, text: &str) -> Result<Self, SessionError> {
        let document = Document::from_text(text);
        if document.is_empty() {
            return Err(SessionError::Invalid("document has no tokens".into()));
        }
        let selection = (0..document.n_sentences()).collect();
        let mut session = Session {
            id: id.into(),
            document,
            selection,
            word_selection: None,
            aggregate: true,
            threshold: DEFAULT_THRESHOLD,
            coverage: None,
            summary: Vec::new(),
            history: Vec::new(),
        };
        let detail = format!(
            "{} tokens, {} sentences",
            session.document.len(),
            session.document.n_sentences()
        );
        session.log(EventKind::Create, detail);
        Ok(session)
    }

    fn log(&mut self, kind: EventKind, detail: String) {
        let seq = self.history.len();
        self.history.push(HistoryEvent { seq, kind, detail });
    }

    pub fn history(&self) -> &[HistoryEvent] {
        &self.history
    }

    pub fn summary(&self) -> &[SummarySentence] {
        &self.summary
    }

    pub fn summary_tokens(&self) -> Vec<String> {
        self.summary.iter().flat_map(|s| s.tokens()).collect()
    }

    /// Source word positions the decoder may copy from.
    pub fn selected_positions(&self) -> BTreeSet<usize> {
        match &self.word_selection {
            Some(words) if !self.aggregate => words.clone(),
            _ => self
                .selection
                .iter()
                .flat_map(|&s| {
                    let (a, b) = self.document.sentence_spans[s];
                    a..b
                })
                .collect(),
        }
    }

    pub fn set_selection(&mut self, sentences: &[usize]) -> Result<(), SessionError> {
        let n = self.document.n_sentences();
        if let Some(&bad) = sentences.iter().find(|&&s| s >= n) {
            return Err(SessionError::InvalidIndex {
                what: "sentence",
                index: bad,
                len: n,
            });
        }
        self.selection = sentences.iter().copied().collect();
        self.word_selection = None;
        let detail = format!("sentences {:?}", self.selection);
        self.log(EventKind::Select, detail);
        Ok(())
    }

    /// Selects individual words; only allowed while aggregation is off.
    pub fn set_word_selection(&mut self, positions: &[usize]) -> Result<(), SessionError> {
        if self.aggregate {
            return Err(SessionError::Invalid(
                "word-level selection needs aggregation turned off".into(),
            ));
        }
        let n = self.document.len();
        if let Some(&bad) = positions.iter().find(|&&p| p >= n) {
            return Err(SessionError::InvalidIndex {
                what: "word",
                index: bad,
                len: n,
            });
        }
        let words: BTreeSet<usize> = positions.iter().copied().collect();
        let detail = format!("words {words:?}");
        self.word_selection = Some(words);
        self.log(EventKind::Select, detail);
        Ok(())
    }

    /// Turning aggregation back on drops any word-level selection.
    pub fn set_aggregate(&mut self, aggregate: bool) {
        self.aggregate = aggregate;
        if aggregate {
            self.word_selection = None;
        }
    }

    pub fn select_template(&mut self, template: Template) -> Result<(), SessionError> {
        let sentences: Vec<usize> = match template {
            Template::All => (0..self.document.n_sentences()).collect(),
            Template::None => Vec::new(),
            Template::Match => match &self.coverage {
                Some(c) => c.covered_sentences.clone(),
                None => return Err(SessionError::NoBackwardResult),
            },
        };
        self.set_selection(&sentences)
    }

    pub fn run_forward(
        &mut self,
        model: &SummarizerModel,
        backward: &BackwardModel,
        request: &ForwardRequest,
    ) -> Result<(), SessionError> {
        let vocab = &model.vocab;
        let prefix_words: Vec<String> = match (&request.prefix, request.mode) {
            (Some(text), Mode::Complete) => {
                let mut words = tokenize(text);
                while words.last().is_some_and(|w| w == ELLIPSIS_TOKEN) {
                    words.pop();
                }
                words
            }
            (Some(_), _) => {
                return Err(SessionError::Invalid(
                    "prefix is only valid for complete".into(),
                ))
            }
            (None, _) => Vec::new(),
        };
        let context = match request.mode {
            Mode::InitWith => Vec::new(),
            _ => vocab.encode(&self.summary_tokens()),
        };
        let gen = GenerationRequest {
            mode: request.mode,
            n_sentences: request.n_sentences,
            prefix_summary: context,
            prefix_in_sentence: vocab.encode(&prefix_words),
            selection: Some(self.selected_positions()),
            beam_width: request.beam_width,
            seed: 0,
        };
        let result = generate(model, &self.document, &gen)?;

        let mut rows = result.trace.rows.into_iter();
        let mut new_sentences = Vec::with_capacity(result.sentences.len());
        let mut typed = prefix_words.into_iter();
        for ids in &result.sentences {
            let tokens = ids
                .iter()
                .map(|&id| {
                    let row = rows.next().expect("one trace row per generated token");
                    // Teacher-forced tokens keep the user's spelling even when out of vocabulary.
                    let (text, by_user) = if row.teacher_forced {
                        (typed.next().expect("prefix token"), true)
                    } else {
                        (vocab.token(id).to_string(), false)
                    };
                    SummaryToken {
                        text,
                        by_user,
                        trace: Some(row),
                    }
                })
                .collect();
            new_sentences.push(SummarySentence { tokens });
        }
        if request.mode == Mode::InitWith {
            self.summary.clear();
        }
        self.summary.extend(new_sentences);
        let mut detail = format!(
            "{:?} produced {} sentence(s)",
            request.mode,
            result.sentences.len()
        );
        for w in &result.trace.warnings {
            detail.push_str("; ");
            detail.push_str(w);
        }
        self.log(EventKind::Forward, detail);
        self.run_backward(backward)
    }

    /// Replaces the text of summary sentence `index`. Unchanged tokens keep
    /// their provenance and decoder record; the summary is re-segmented
    /// afterwards, so an edit may merge or split sentences.
    pub fn edit_sentence(
        &mut self,
        index: usize,
        new_text: &str,
        backward: &BackwardModel,
    ) -> Result<(), SessionError> {
        self.check_summary_index(index)?;
        let new_words = tokenize(new_text);
        let old = &self.summary[index];
        let old_words = old.tokens();
        let pairs = lcs_pairs(&old_words, &new_words);
        let mut tokens: Vec<SummaryToken> = new_words
            .iter()
            .map(|w| SummaryToken {
                text: w.clone(),
                by_user: true,
                trace: None,
            })
            .collect();
        for (i, j) in pairs {
            tokens[j] = old.tokens[i].clone();
        }
        self.summary[index] = SummarySentence { tokens };
        self.resegment();
        self.log(
            EventKind::Edit,
            format!(
                "sentence {index}: {:?} -> {:?}",
                old_words.join(" "),
                new_words.join(" ")
            ),
        );
        self.run_backward(backward)
    }

    pub fn delete_sentence(
        &mut self,
        index: usize,
        backward: &BackwardModel,
    ) -> Result<(), SessionError> {
        self.check_summary_index(index)?;
        self.summary.remove(index);
        self.log(EventKind::Delete, format!("sentence {index}"));
        self.run_backward(backward)
    }

    fn check_summary_index(&self, index: usize) -> Result<(), SessionError> {
        if index >= self.summary.len() {
            return Err(SessionError::InvalidIndex {
                what: "summary sentence",
                index,
                len: self.summary.len(),
            });
        }
        Ok(())
    }

    fn resegment(&mut self) {
        let tokens: Vec<SummaryToken> = self.summary.drain(..).flat_map(|s| s.tokens).collect();
        let words: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        let spans = split_sentences(&words);
        self.summary = spans
            .into_iter()
            .map(|(a, b)| SummarySentence {
                tokens: tokens[a..b].to_vec(),
            })
            .collect();
    }

    /// Attributes the current summary and stores the coverage.
    pub fn run_backward(&mut self, backward: &BackwardModel) -> Result<(), SessionError> {
        let report = backward.attribute(&self.document, &self.summary_tokens(), self.threshold)?;
        let mut detail = format!("covered sentences {:?}", report.covered_sentences);
        if let Some(w) = &report.warning {
            detail.push_str("; ");
            detail.push_str(w);
        }
        self.coverage = Some(report);
        self.log(EventKind::Backward, detail);
        Ok(())
    }

    /// Decoder records that survive in the current summary, in reading order.
    pub fn trace(&self) -> Vec<TraceEntry> {
        let mut out = Vec::new();
        for (s, sentence) in self.summary.iter().enumerate() {
            for (p, tok) in sentence.tokens.iter().enumerate() {
                if let Some(row) = &tok.trace {
                    out.push(TraceEntry {
                        sentence: s,
                        position: p,
                        token: tok.text.clone(),
                        attention: row.attention.clone(),
                        copy_flag: row.copy_flag,
                    });
                }
            }
        }
        out
    }

    /// Sentence-level attention graph, `[source sentences][summary sentences]`,
    /// from surviving decoder records; `None` when nothing is traced.
    pub fn aggregated(&self) -> Option<Vec<Vec<f64>>> {
        let trace = self.trace();
        if trace.is_empty() {
            return None;
        }
        let mut spans = Vec::with_capacity(self.summary.len());
        let mut start = 0;
        for s in 0..self.summary.len() {
            let end = start
                + trace[start..]
                    .iter()
                    .take_while(|e| e.sentence == s)
                    .count();
            spans.push((start, end));
            start = end;
        }
        let attention: Vec<Vec<f64>> = trace.into_iter().map(|e| e.attention).collect();
        Some(aggregate_attention(
            &attention,
            &self.document.sentence_spans,
            &spans,
        ))
    }

    pub fn to_view(&self) -> SessionView {
        let trace = self.trace();
        SessionView {
            id: self.id.clone(),
            document: DocumentView {
                tokens: self.document.tokens.clone(),
                sentences: self
                    .document
                    .sentence_spans
                    .iter()
                    .map(|&(a, b)| [a, b])
                    .collect(),
            },
            selection: self.selection.iter().copied().collect(),
            summary: self
                .summary
                .iter()
                .map(|s| SentenceView {
                    tokens: s.tokens(),
                    origin: s.origin(),
                })
                .collect(),
            coverage: self.coverage.clone(),
            aggregated: self.aggregated(),
            history: self.history.clone(),
            aggregate: self.aggregate,
            word_selection: self
                .word_selection
                .as_ref()
                .map(|w| w.iter().copied().collect()),
            last_trace: (!trace.is_empty()).then_some(trace),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_view()).expect("session view serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentView {
    pub tokens: Vec<String>,
    pub sentences: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceView {
    pub tokens: Vec<String>,
    pub origin: Origin,
}

/// Wire form of a session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub document: DocumentView,
    pub selection: Vec<usize>,
    pub summary: Vec<SentenceView>,
    pub coverage: Option<CoverageReport>,
    pub aggregated: Option<Vec<Vec<f64>>>,
    pub history: Vec<HistoryEvent>,
    pub aggregate: bool,
    pub word_selection: Option<Vec<usize>>,
    pub last_trace: Option<Vec<TraceEntry>>,
}

#[cfg(test)]
mod tests;
