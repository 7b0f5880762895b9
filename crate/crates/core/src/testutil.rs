use crate::model::{ModelConfig, SummarizerModel};
use crate::textproc::Vocab;

pub(crate) fn vocab_with(words: &[&str]) -> Vocab {
    let mut tokens: Vec<String> = ["<pad>", "<bos>", "<eos>", "<unk>", "..."]
        .iter()
        .map(|s| s.to_string())
        .collect();
    tokens.extend(words.iter().map(|s| s.to_string()));
    Vocab::from_tokens(tokens).unwrap()
}

pub(crate) fn toy_vocab() -> Vocab {
    vocab_with(&["a", "b", "c", "d", "e", ".", "says"])
}

pub(crate) fn toy_model(hidden: usize, seed: u64) -> SummarizerModel {
    let vocab = toy_vocab();
    SummarizerModel::new(ModelConfig::new(vocab.len(), hidden), vocab, seed).unwrap()
}
