//! Fixtures shared by the benchmarks.

use csi_core::backward::BackwardModel;
use csi_core::textproc::{generate_synthetic_corpus, CorpusExample, VocabSpec};
use csi_core::training::corpus_vocab;
use csi_core::{ModelConfig, SummarizerModel};

pub struct Fixture {
    pub corpus: Vec<CorpusExample>,
    pub forward: SummarizerModel,
    pub backward: BackwardModel,
}

/// Untrained models sized like the reference training run, over a small
/// synthetic corpus. Timings do not depend on the weight values.
pub fn fixture(hidden_dim: usize) -> Fixture {
    let corpus =
        generate_synthetic_corpus(0, 64, 4, &VocabSpec::default()).expect("valid corpus spec");
    let vocab = corpus_vocab(&corpus);
    let forward = SummarizerModel::new(ModelConfig::new(vocab.len(), hidden_dim), vocab.clone(), 0)
        .expect("valid model config");
    let backward = BackwardModel::new(vocab, hidden_dim, 0).expect("valid hidden size");
    Fixture {
        corpus,
        forward,
        backward,
    }
}
