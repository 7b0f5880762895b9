//! Tokenization, sentence segmentation, vocabularies and the synthetic
//! summarization corpus.

mod corpus;
mod vocab;

pub use corpus::{generate_synthetic_corpus, read_corpus, write_corpus, CorpusExample, VocabSpec};
pub use vocab::{build_vocab, Vocab, BOS, ELLIPSIS, EOS, PAD, UNK};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("vocabulary spec too small: {0}")]
    VocabSpec(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

const DETACHED: &[char] = &['.', ',', '!', '?', '\'', '"', '(', ')', ':', ';'];
pub const ELLIPSIS_TOKEN: &str = "...";

/// Lowercases, splits on whitespace and detaches punctuation into
/// single-character tokens. A run of three dots stays one `...` token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut word = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c == '.' && chars.get(i + 1) == Some(&'.') && chars.get(i + 2) == Some(&'.') {
                flush(&mut word, &mut out);
                out.push(ELLIPSIS_TOKEN.to_string());
                i += 3;
                continue;
            }
            if DETACHED.contains(&c) {
                flush(&mut word, &mut out);
                out.push(c.to_string());
            } else {
                word.extend(c.to_lowercase());
            }
            i += 1;
        }
        flush(&mut word, &mut out);
    }
    out
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

/// Joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn is_terminator(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

/// Half-open sentence spans: a sentence ends after each `.`, `!` or `?`;
/// trailing unterminated tokens form a final sentence.
pub fn split_sentences<S: AsRef<str>>(tokens: &[S]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if is_terminator(t.as_ref()) {
            spans.push((start, i + 1));
            start = i + 1;
        }
    }
    if start < tokens.len() {
        spans.push((start, tokens.len()));
    }
    spans
}

/// Tokenized, sentence-segmented source text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub raw: String,
    pub tokens: Vec<String>,
    pub sentence_spans: Vec<(usize, usize)>,
}

impl Document {
    pub fn from_text(raw: &str) -> Self {
        let tokens = tokenize(raw);
        let sentence_spans = split_sentences(&tokens);
        Document {
            raw: raw.to_string(),
            tokens,
            sentence_spans,
        }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let sentence_spans = split_sentences(&tokens);
        Document {
            raw: detokenize(&tokens),
            tokens,
            sentence_spans,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_sentences(&self) -> usize {
        self.sentence_spans.len()
    }

    /// Index of the sentence containing token `pos`.
    pub fn sentence_of(&self, pos: usize) -> Option<usize> {
        self.sentence_spans
            .iter()
            .position(|&(s, e)| (s..e).contains(&pos))
    }

    pub fn sentence_tokens(&self, sentence: usize) -> &[String] {
        let (s, e) = self.sentence_spans[sentence];
        &self.tokens[s..e]
    }
}
