mod common;

use std::sync::OnceLock;

use common::{backend, embed, quick_config};
use promptrevert_core::backend::{DiffusionBackend, TextEncoder, ToyBackend};
use promptrevert_core::corpus::train_heldout_split;
use promptrevert_core::e2t::{
    corrector_features, train_corrector, train_zero_step, E2TBundle, TrainConfig, TrainReport,
};
use promptrevert_core::eval::token_f1;
use promptrevert_core::types::{LatentTextEmbedding, Prompt};
use promptrevert_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Trained {
    bundle: E2TBundle<&'static ToyBackend>,
    reports: [TrainReport; 2],
    heldout: Vec<(Prompt, LatentTextEmbedding)>,
}

fn toy() -> &'static ToyBackend {
    static B: OnceLock<ToyBackend> = OnceLock::new();
    B.get_or_init(backend)
}

// Full-size training on the 500-prompt corpus, shared by every test here.
fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let b = toy();
        let (train, held) = train_heldout_split(500, 50, 11);
        let corpus = embed(b, &train);
        let cfg = TrainConfig::default();
        let (z, zr) = train_zero_step(&corpus, b.tokenizer(), &cfg).unwrap();
        let (c, cr) = train_corrector(&corpus, &z, b, &cfg).unwrap();
        Trained {
            bundle: E2TBundle::new(z, c, b).unwrap(),
            reports: [zr, cr],
            heldout: embed(b, &held),
        }
    })
}

fn mean_f1(t: &Trained, width: usize, steps: usize) -> f64 {
    let total: f64 = t
        .heldout
        .iter()
        .map(|(p, c)| token_f1(t.bundle.invert_embedding(c, width, steps).unwrap().token_ids(), p.token_ids()))
        .sum();
    total / t.heldout.len() as f64
}

#[test]
fn training_halves_the_cross_entropy() {
    for r in &trained().reports {
        let (first, last) = (r.epoch_losses[0], *r.epoch_losses.last().unwrap());
        assert!(last <= 0.5 * first, "{first} -> {last}");
        assert!(r.warnings.is_empty());
    }
}

#[test]
fn zero_step_recovers_most_tokens() {
    let f1 = mean_f1(trained(), 1, 0);
    assert!(f1 >= 0.6, "zero-step held-out F1 {f1}");
}

#[test]
fn one_correction_step_does_not_hurt() {
    let t = trained();
    let zero = mean_f1(t, 4, 0);
    let one = mean_f1(t, 4, 1);
    assert!(one >= zero, "{one} < {zero}");
}

#[test]
fn perfect_hypothesis_outscores_single_token_corruptions() {
    let t = trained();
    let b = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (p, c) in t.heldout.iter().take(5) {
        let cond = t.bundle.corrector_conditioning(c, p.token_ids(), c).unwrap();
        let clean = t.bundle.corrector().log_likelihood(&cond, p.token_ids());
        for _ in 0..20 {
            let mut bad = p.token_ids().to_vec();
            let pos = rng.random_range(0..bad.len());
            let mut tok = bad[pos];
            while tok == bad[pos] {
                tok = rng.random_range(1..b.tokenizer().vocab_size() as u32);
            }
            bad[pos] = tok;
            let worse = t.bundle.corrector().log_likelihood(&cond, &bad);
            assert!(clean > worse, "{p}: {clean} vs {worse}");
        }
    }
}

#[test]
fn corrector_reads_the_hypothesis_embedding() {
    let t = trained();
    let zero = LatentTextEmbedding::zeros(toy().seq_len(), toy().embed_dim()).unwrap();
    let changed = t.heldout.iter().any(|(p, c)| {
        let hyp = t.bundle.zero_step_generate(c).unwrap();
        let h = toy().encode_text(&hyp).unwrap();
        let full = t.bundle.corrector_conditioning(c, hyp.token_ids(), &h).unwrap();
        let ablated = t.bundle.corrector().condition(&corrector_features(c, &zero).unwrap(), Some(hyp.token_ids())).unwrap();
        let a = t.bundle.corrector().next_token_distribution(&full, &p.token_ids()[..1]);
        let z = t.bundle.corrector().next_token_distribution(&ablated, &p.token_ids()[..1]);
        a.iter().zip(&z).any(|(x, y)| (x - y).abs() > 1e-6)
    });
    assert!(changed);
}

#[test]
fn best_distance_never_increases() {
    let t = trained();
    for (_, c) in &t.heldout {
        let r = t.bundle.invert_traced(c, 4, 4).unwrap();
        assert_eq!(r.best_distances.len(), 5);
        assert!(r.best_distances.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.best_distances);
        assert_eq!(r.distance, *r.best_distances.last().unwrap());
        assert!(r.prompt.len() <= t.bundle.max_len());
    }
}

#[test]
fn width_one_and_no_steps_is_the_zero_step_output() {
    let t = trained();
    for (_, c) in t.heldout.iter().take(10) {
        assert_eq!(t.bundle.invert_embedding(c, 1, 0).unwrap(), t.bundle.zero_step_generate(c).unwrap());
    }
    let c = &t.heldout[0].1;
    assert!(matches!(t.bundle.invert_embedding(c, 0, 2), Err(Error::InvalidConfig(_))));
    let wrong = LatentTextEmbedding::zeros(3, 16).unwrap();
    assert!(t.bundle.invert_embedding(&wrong, 4, 1).is_err());
}

#[test]
fn training_is_deterministic_and_leaves_the_encoder_alone() {
    let b = backend();
    let before = b.parameter_digest();
    let (train, _) = train_heldout_split(80, 0, 3);
    let corpus = embed(&b, &train);
    let cfg = quick_config();
    let run = || {
        let (z, _) = train_zero_step(&corpus, b.tokenizer(), &cfg).unwrap();
        let (c, _) = train_corrector(&corpus, &z, &b, &cfg).unwrap();
        (z.to_blob(), c.to_blob())
    };
    let (a, c) = (run(), run());
    assert!(a.0.iter().zip(&c.0).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.1.iter().zip(&c.1).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(b.parameter_digest(), before);
    let other = TrainConfig { seed: 1, ..cfg };
    let (z2, _) = train_zero_step(&corpus, b.tokenizer(), &other).unwrap();
    assert_ne!(z2.to_blob(), a.0);
}

#[test]
fn bad_training_inputs_are_rejected() {
    let b = backend();
    assert!(matches!(train_zero_step(&[], b.tokenizer(), &quick_config()), Err(Error::EmptyCorpus)));
    let corpus = embed(&b, &train_heldout_split(10, 0, 0).0);
    let zero_batch = TrainConfig { batch_size: 0, ..quick_config() };
    assert!(train_zero_step(&corpus, b.tokenizer(), &zero_batch).is_err());
}
