//! Desk-scale fixture suite: targets generated by a toy backend from known
//! templated prompts, each paired with an imperfect caption.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::DiffusionBackend;
use crate::corpus::{self, COLORS, OBJECTS, PLACES, RELATIONS};
use crate::error::Result;
use crate::types::{ImageTensor, Prompt};

#[derive(Clone, Debug, PartialEq)]
pub struct ToyFixture {
    pub id: String,
    /// Prompt that generated the target.
    pub reference: Prompt,
    /// What the fixture captioner reports for the target.
    pub caption: String,
    pub target: ImageTensor,
}

/// Replace `swaps` distinct content slots of a templated prompt with other
/// words from the same slot list.
pub fn corrupt_template(prompt: &str, swaps: usize, rng: &mut impl Rng) -> String {
    let mut words: Vec<&str> = prompt.split(' ').collect();
    // (position, options): the template is `a color object relation a place`.
    let mut slots: Vec<(usize, &[&str])> = alloc::vec![
        (1, &COLORS[..]),
        (2, &OBJECTS[..]),
        (3, &RELATIONS[..]),
        (5, &PLACES[..]),
    ];
    for _ in 0..swaps.min(slots.len()) {
        let k = rng.random_range(0..slots.len());
        let (pos, options) = slots.swap_remove(k);
        if pos >= words.len() {
            continue;
        }
        let current = words[pos];
        let alternatives: Vec<&str> = options.iter().copied().filter(|w| *w != current).collect();
        words[pos] = alternatives.choose(rng).copied().unwrap_or(current);
    }
    words.join(" ")
}

/// `n` fixtures. Targets are quantized to 8 bits, so the in-memory suite
/// matches what a PPM round trip would give.
pub fn fixture_suite(
    backend: &(impl DiffusionBackend + ?Sized),
    n: usize,
    seed: u64,
    noise_seed: u64,
) -> Result<Vec<ToyFixture>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f1c5);
    let noise = backend.noise_spec(noise_seed);
    let steps = backend.schedule().len();
    corpus::synthetic_corpus(n, seed)
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            let reference = backend.tokenizer().tokenize(&text)?;
            let c = backend.encode_text(&reference)?;
            let generated = backend.generate(&c, &noise, steps)?;
            let target =
                ImageTensor::from_rgb8(generated.height(), generated.width(), &generated.to_rgb8())?;
            let swaps = 1 + i % 2;
            Ok(ToyFixture {
                id: alloc::format!("fixture-{i:02}"),
                caption: corrupt_template(&text, swaps, &mut rng),
                reference,
                target,
            })
        })
        .collect()
}
