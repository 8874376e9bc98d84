#![allow(dead_code)]

use promptrevert_core::backend::{make_toy_backend, TextEncoder, ToyBackend, ToyBackendSpec};
use promptrevert_core::corpus::train_heldout_split;
use promptrevert_core::e2t::{train_corrector, train_zero_step, E2TBundle, TrainConfig};
use promptrevert_core::types::{LatentTextEmbedding, Prompt};

pub fn backend() -> ToyBackend {
    make_toy_backend(ToyBackendSpec::default()).unwrap()
}

pub fn embed(b: &ToyBackend, texts: &[String]) -> Vec<(Prompt, LatentTextEmbedding)> {
    texts
        .iter()
        .map(|s| {
            let p = b.tokenizer().tokenize(s).unwrap();
            let c = b.encode_text(&p).unwrap();
            (p, c)
        })
        .collect()
}

/// Cheap models for plumbing tests; accuracy is not the point here.
pub fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs_zero: 8,
        epochs_corrector: 4,
        hidden: 32,
        ..Default::default()
    }
}

pub fn bundle<'a>(b: &'a ToyBackend, n_train: usize, cfg: &TrainConfig) -> E2TBundle<&'a ToyBackend> {
    let (train, _) = train_heldout_split(n_train, 0, 11);
    let corpus = embed(b, &train);
    let (z, _) = train_zero_step(&corpus, b.tokenizer(), cfg).unwrap();
    let (c, _) = train_corrector(&corpus, &z, b, cfg).unwrap();
    E2TBundle::new(z, c, b).unwrap()
}
