//! Synthetic summarization corpus with known copy tags.
//!
//! Every document sentence reads `<topic> <filler…> <keyword> .`. A uniformly
//! drawn half of the sentences (rounded up) are important, and the reference
//! summary restates each important sentence, in order, as
//! `<topic> says <keyword> .`. Gold tags mark exactly the topic and keyword
//! positions of the important sentences.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{detokenize, tokenize, Document, TextError};
use crate::numerics::Prng;

const TOPICS: &[&str] = &[
    "nasa",
    "rover",
    "council",
    "senator",
    "court",
    "museum",
    "orchestra",
    "harbor",
    "village",
    "airline",
    "hospital",
    "farmer",
    "engineer",
    "library",
    "festival",
    "startup",
    "railway",
    "glacier",
    "volcano",
    "satellite",
    "navy",
    "bakery",
    "stadium",
    "university",
    "reporter",
    "minister",
    "factory",
    "mayor",
    "telescope",
    "vineyard",
    "pilot",
    "chemist",
    "ranger",
    "refinery",
    "island",
    "bridge",
    "theater",
    "prison",
    "embassy",
    "marathon",
    "laboratory",
    "brewery",
    "pharmacy",
    "ferry",
    "orchard",
    "colony",
    "forest",
    "market",
];

const KEYWORDS: &[&str] = &[
    "water",
    "budget",
    "delay",
    "record",
    "strike",
    "flood",
    "vaccine",
    "merger",
    "drought",
    "discovery",
    "tariff",
    "recall",
    "outage",
    "treaty",
    "surplus",
    "scandal",
    "eclipse",
    "harvest",
    "lawsuit",
    "fossil",
    "glitch",
    "wildfire",
    "election",
    "reform",
    "verdict",
    "shortage",
    "protest",
    "upgrade",
    "pandemic",
    "bailout",
    "landslide",
    "blackout",
    "ceasefire",
    "breakthrough",
    "heatwave",
    "boycott",
    "audit",
    "evacuation",
    "funding",
    "earthquake",
    "migration",
    "ruling",
    "closure",
    "expansion",
    "pollution",
    "rescue",
    "census",
    "deficit",
];

const FILLERS: &[&str] = &[
    "reportedly",
    "quietly",
    "again",
    "today",
    "often",
    "also",
    "still",
    "recently",
    "mostly",
    "nearly",
    "then",
    "soon",
    "later",
    "already",
    "usually",
    "perhaps",
    "indeed",
    "meanwhile",
    "briefly",
    "largely",
    "openly",
    "finally",
    "partly",
    "rarely",
    "widely",
    "slowly",
    "clearly",
    "locally",
    "gladly",
    "newly",
    "jointly",
    "formally",
];

/// Sizes of the word pools the generator draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub topics: usize,
    pub keywords: usize,
    pub fillers: usize,
    pub min_filler: usize,
    pub max_filler: usize,
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec {
            topics: 40,
            keywords: 40,
            fillers: 24,
            min_filler: 1,
            max_filler: 4,
        }
    }
}

impl VocabSpec {
    fn validate(&self, n_sentences: usize) -> Result<(), TextError> {
        let bad = |m: String| Err(TextError::VocabSpec(m));
        if self.topics > TOPICS.len()
            || self.keywords > KEYWORDS.len()
            || self.fillers > FILLERS.len()
        {
            return bad(format!(
                "pools hold at most {} topics, {} keywords, {} fillers",
                TOPICS.len(),
                KEYWORDS.len(),
                FILLERS.len()
            ));
        }
        if self.keywords < n_sentences {
            return bad(format!(
                "{} keywords cannot give {n_sentences} distinct keywords per document",
                self.keywords
            ));
        }
        if self.topics < n_sentences {
            return bad(format!(
                "{} topics cannot give {n_sentences} distinct topics per document",
                self.topics
            ));
        }
        if self.min_filler > self.max_filler || (self.max_filler > 0 && self.fillers == 0) {
            return bad("filler range needs a non-empty filler pool and min <= max".into());
        }
        Ok(())
    }
}

/// One training pair with per-source-token gold copy tags.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusExample {
    pub document: Document,
    pub summary_tokens: Vec<String>,
    pub gold_tags: Vec<u8>,
    /// For each summary token, the source position it was copied from.
    pub copy_sources: Vec<Option<usize>>,
}

impl CorpusExample {
    /// Sentences holding at least one gold-tagged position.
    pub fn important_sentences(&self) -> Vec<usize> {
        (0..self.document.n_sentences())
            .filter(|&s| {
                let (a, b) = self.document.sentence_spans[s];
                self.gold_tags[a..b].contains(&1)
            })
            .collect()
    }
}

/// Draws `n_examples` documents; example `i` uses its own stream seeded with `seed + i`.
pub fn generate_synthetic_corpus(
    seed: u64,
    n_examples: usize,
    n_sentences: usize,
    spec: &VocabSpec,
) -> Result<Vec<CorpusExample>, TextError> {
    if n_sentences < 2 {
        return Err(TextError::Invalid(format!(
            "need at least 2 sentences per document, got {n_sentences}"
        )));
    }
    spec.validate(n_sentences)?;
    Ok((0..n_examples)
        .map(|i| {
            generate_one(
                &mut Prng::new(seed.wrapping_add(i as u64)),
                n_sentences,
                spec,
            )
        })
        .collect())
}

fn pick_distinct(prng: &mut Prng, pool: &[&'static str], k: usize) -> Vec<&'static str> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    prng.shuffle(&mut idx);
    idx[..k].iter().map(|&i| pool[i]).collect()
}

fn generate_one(prng: &mut Prng, n_sentences: usize, spec: &VocabSpec) -> CorpusExample {
    let topics = pick_distinct(prng, &TOPICS[..spec.topics], n_sentences);
    let keywords = pick_distinct(prng, &KEYWORDS[..spec.keywords], n_sentences);

    let mut order: Vec<usize> = (0..n_sentences).collect();
    prng.shuffle(&mut order);
    let mut important = order[..n_sentences.div_ceil(2)].to_vec();
    important.sort_unstable();

    let mut tokens = Vec::new();
    let mut gold_tags = Vec::new();
    let mut anchors = Vec::with_capacity(n_sentences);
    for s in 0..n_sentences {
        let tagged = u8::from(important.contains(&s));
        let topic_pos = tokens.len();
        tokens.push(topics[s].to_string());
        gold_tags.push(tagged);
        let n_fill = spec.min_filler + prng.below(spec.max_filler - spec.min_filler + 1);
        for _ in 0..n_fill {
            tokens.push(FILLERS[prng.below(spec.fillers)].to_string());
            gold_tags.push(0);
        }
        let keyword_pos = tokens.len();
        tokens.push(keywords[s].to_string());
        gold_tags.push(tagged);
        tokens.push(".".to_string());
        gold_tags.push(0);
        anchors.push((topic_pos, keyword_pos));
    }

    let mut summary_tokens = Vec::new();
    let mut copy_sources = Vec::new();
    for &s in &important {
        let (tp, kp) = anchors[s];
        summary_tokens.extend([
            topics[s].to_string(),
            "says".to_string(),
            keywords[s].to_string(),
            ".".to_string(),
        ]);
        copy_sources.extend([Some(tp), None, Some(kp), None]);
    }

    CorpusExample {
        document: Document::from_tokens(tokens),
        summary_tokens,
        gold_tags,
        copy_sources,
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    document: String,
    summary: String,
    tags: Vec<u8>,
}

/// Writes JSON Lines: `{"document": str, "summary": str, "tags": [0|1, ...]}`.
pub fn write_corpus<W: Write>(mut out: W, corpus: &[CorpusExample]) -> std::io::Result<()> {
    for ex in corpus {
        let line = CorpusLine {
            document: detokenize(&ex.document.tokens),
            summary: detokenize(&ex.summary_tokens),
            tags: ex.gold_tags.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusExample>, TextError> {
    let file =
        std::fs::File::open(path).map_err(|e| TextError::Io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TextError::Io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| TextError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(parse_example(parsed).map_err(|message| TextError::Parse {
            line: i + 1,
            message,
        })?);
    }
    Ok(out)
}

fn parse_example(line: CorpusLine) -> Result<CorpusExample, String> {
    let document = Document::from_text(&line.document);
    if line.tags.len() != document.len() {
        return Err(format!(
            "{} tags for {} document tokens",
            line.tags.len(),
            document.len()
        ));
    }
    if line.tags.iter().any(|&t| t > 1) {
        return Err("tags must be 0 or 1".into());
    }
    let summary_tokens = tokenize(&line.summary);
    let mut used = vec![false; document.len()];
    let copy_sources = summary_tokens
        .iter()
        .map(|tok| {
            let pos = (0..document.len())
                .find(|&i| !used[i] && line.tags[i] == 1 && &document.tokens[i] == tok)?;
            used[pos] = true;
            Some(pos)
        })
        .collect();
    Ok(CorpusExample {
        document,
        summary_tokens,
        gold_tags: line.tags,
        copy_sources,
    })
}
