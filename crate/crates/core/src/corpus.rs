//! Templated prompt corpus: `a {color} {object} {relation} a {place}`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const COLORS: [&str; 8] = [
    "red", "blue", "green", "yellow", "black", "white", "orange", "purple",
];
pub const OBJECTS: [&str; 12] = [
    "cat", "dog", "car", "ball", "chair", "lamp", "horse", "bird", "cup", "book", "boat", "vase",
];
pub const RELATIONS: [&str; 6] = ["on", "near", "under", "behind", "beside", "in"];
pub const PLACES: [&str; 8] = [
    "table", "street", "field", "beach", "room", "garden", "river", "desk",
];

/// Separator used when fusing prompts.
pub const CONJUNCTION: &str = "and";
pub const ARTICLE: &str = "a";

/// All words the templates can produce, plus the conjunction, without
/// duplicates and in a fixed order.
pub fn vocabulary_words() -> impl Iterator<Item = &'static str> {
    [CONJUNCTION, ARTICLE]
        .into_iter()
        .chain(COLORS)
        .chain(OBJECTS)
        .chain(RELATIONS)
        .chain(PLACES)
}

pub fn template_count() -> usize {
    COLORS.len() * OBJECTS.len() * RELATIONS.len() * PLACES.len()
}

/// The `index`-th prompt in lexicographic slot order.
pub fn template_prompt(index: usize) -> String {
    let mut i = index % template_count();
    let place = PLACES[i % PLACES.len()];
    i /= PLACES.len();
    let relation = RELATIONS[i % RELATIONS.len()];
    i /= RELATIONS.len();
    let object = OBJECTS[i % OBJECTS.len()];
    i /= OBJECTS.len();
    let color = COLORS[i];
    format!("a {color} {object} {relation} a {place}")
}

/// `n` distinct templated prompts drawn by a seeded shuffle.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut order: Vec<usize> = (0..template_count()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.into_iter().take(n).map(template_prompt).collect()
}

/// Disjoint train / held-out sets from one shuffle.
pub fn train_heldout_split(n_train: usize, n_heldout: usize, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut all = synthetic_corpus(n_train + n_heldout, seed);
    let heldout = all.split_off(n_train.min(all.len()));
    (all, heldout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    #[test]
    fn words_are_unique() {
        let words: Vec<_> = vocabulary_words().collect();
        let set: BTreeSet<_> = words.iter().collect();
        assert_eq!(words.len(), set.len());
    }

    #[test]
    fn corpus_is_distinct_and_deterministic() {
        let a = synthetic_corpus(500, 3);
        let b = synthetic_corpus(500, 3);
        assert_eq!(a, b);
        let set: BTreeSet<_> = a.iter().collect();
        assert_eq!(set.len(), 500);
        assert!(a.iter().all(|p| p.split(' ').count() == 6));
    }

    #[test]
    fn split_is_disjoint() {
        let (train, held) = train_heldout_split(500, 50, 1);
        assert_eq!(train.len(), 500);
        assert_eq!(held.len(), 50);
        let set: BTreeSet<_> = train.iter().collect();
        assert!(held.iter().all(|p| !set.contains(p)));
    }
}
