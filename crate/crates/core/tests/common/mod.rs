#![allow(dead_code)]

use std::path::PathBuf;

use niqqud::codec::LetterSets;
use niqqud::corpus::{Document, Vocabulary};
use niqqud::dotter::Dotter;
use niqqud::network::{init_params, ModelConfig};

pub mod oracle;

pub fn fixture_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/corpus")
}

/// Root of the published corpus, when one is provided through `NIQQUD_CORPUS`.
pub fn public_corpus() -> Option<PathBuf> {
    std::env::var_os("NIQQUD_CORPUS").map(PathBuf::from).filter(|p| p.is_dir())
}

pub fn doc(id: &str, text: &str) -> Document {
    Document::parse(id, "test", text.to_string(), &LetterSets::default())
}

/// An untrained model; predictions are arbitrary but deterministic.
pub fn random_dotter(dims: usize, seed: u64) -> Dotter {
    let vocab = Vocabulary::default();
    let config = ModelConfig::new(vocab.len()).with_dims(dims, dims);
    Dotter::new(init_params(&config, seed), config, vocab)
}

/// Every raw text file of the fixture corpus, in a fixed order.
pub fn fixture_texts() -> Vec<(String, String)> {
    let mut files = Vec::new();
    let mut stack = vec![fixture_root()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "txt") {
                files.push(p);
            }
        }
    }
    files.sort();
    files
        .into_iter()
        .map(|p| (p.display().to_string(), std::fs::read_to_string(&p).unwrap()))
        .collect()
}
