use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::TextError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const ELLIPSIS: usize = 4;

const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "..."];

/// Token ↔ id mapping with the five reserved ids at the front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TextError> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(TextError::Invalid(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(TextError::Invalid(format!(
                    "duplicate vocabulary token '{t}'"
                )));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens
            .get(id)
            .map(String::as_str)
            .unwrap_or(RESERVED[UNK])
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = TextError;
    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Most frequent tokens first (ties lexicographic), truncated so the whole
/// vocabulary including reserved entries has at most `max_size` ids.
pub fn build_vocab<'a, I, S>(corpus: I, max_size: usize) -> Result<Vocab, TextError>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    if max_size <= RESERVED.len() {
        return Err(TextError::Invalid(format!(
            "max_size must exceed {}, got {max_size}",
            RESERVED.len()
        )));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in corpus {
        for t in doc {
            let t = t.as_ref();
            if !RESERVED.contains(&t) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(
            ranked
                .into_iter()
                .take(max_size - RESERVED.len())
                .map(|(t, _)| t.to_string()),
        )
        .collect();
    Vocab::from_tokens(tokens)
}
