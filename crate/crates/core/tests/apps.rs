mod common;

use std::collections::BTreeMap;

use common::{backend, bundle, quick_config};
use promptrevert_core::apps::{edit_prompt, evolutionary_generate, fuse_prompts, EditSpec};
use promptrevert_core::backend::TextEncoder;
use promptrevert_core::captioner::FixtureCaptioner;
use promptrevert_core::corpus::vocabulary_words;
use promptrevert_core::fixtures::fixture_suite;
use promptrevert_core::optimizer::NullClock;
use promptrevert_core::tokenizer::{Tokenizer, Vocabulary};
use promptrevert_core::types::InversionConfig;
use promptrevert_core::Error;
use proptest::prelude::*;

fn words() -> Vec<&'static str> {
    vocabulary_words().collect()
}

fn sentence(max: usize) -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(words()), 1..=max).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn empty_edit_is_the_identity(text in sentence(12), noise in "[ ]{0,3}") {
        let v = Vocabulary::toy(64).unwrap();
        let p = v.tokenize(&format!("{noise}{}{noise}", text.to_uppercase())).unwrap();
        prop_assert_eq!(edit_prompt(&p, &EditSpec::default(), &v).unwrap(), p);
    }

    #[test]
    fn removal_drops_exactly_that_word(text in sentence(12), victim in proptest::sample::select(words())) {
        let v = Vocabulary::toy(64).unwrap();
        let p = v.tokenize(&text).unwrap();
        let spec = EditSpec::new(vec![victim.to_string()], BTreeMap::new()).unwrap();
        let kept: Vec<&str> = p.words().filter(|w| *w != victim).collect();
        match edit_prompt(&p, &spec, &v) {
            Ok(e) => prop_assert_eq!(e.words().collect::<Vec<_>>(), kept),
            Err(Error::EmptyPrompt) => prop_assert!(kept.is_empty()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn fusion_is_prefix_of_the_joined_prompts(a in sentence(16), b in sentence(16), max in 1usize..40) {
        let v = Vocabulary::toy(64).unwrap();
        let (p1, p2) = (v.tokenize(&a).unwrap(), v.tokenize(&b).unwrap());
        let f = fuse_prompts(&p1, &p2, max, &v).unwrap();
        prop_assert!(f.len() <= max);
        let full = v.tokenize(&format!("{a} and {b}")).unwrap();
        prop_assert_eq!(f.token_ids(), &full.token_ids()[..max.min(full.len())]);
    }
}

#[test]
fn edit_examples_on_a_scene_vocabulary() {
    let v = Vocabulary::new(["a", "house", "with", "trees", "plate", "egg", "broccoli"]).unwrap();
    let house = v.tokenize("a house with trees").unwrap();
    let removed = edit_prompt(&house, &EditSpec::new(vec!["trees".into()], BTreeMap::new()).unwrap(), &v).unwrap();
    assert_eq!(removed.text(), "a house with");
    let plate = v.tokenize("a plate with egg").unwrap();
    let swap = BTreeMap::from([("egg".to_string(), "broccoli".to_string())]);
    let replaced = edit_prompt(&plate, &EditSpec::new(vec![], swap).unwrap(), &v).unwrap();
    assert_eq!(replaced.text(), "a plate with broccoli");
    let unknown = BTreeMap::from([("egg".to_string(), "toast".to_string())]);
    assert!(matches!(
        edit_prompt(&plate, &EditSpec::new(vec![], unknown).unwrap(), &v),
        Err(Error::UnknownWord { .. })
    ));
}

#[test]
fn evolution_fuses_both_parents_and_is_repeatable() {
    let b = backend();
    let fx = fixture_suite(&b, 3, 7, 0).unwrap();
    let e2t = bundle(&b, 80, &quick_config());
    let cap = FixtureCaptioner::from_fixtures(&fx);
    let images: Vec<_> = fx.iter().take(2).map(|f| f.target.clone()).collect();
    let cfg = InversionConfig { max_epoch: 10, ..Default::default() };
    let run = |g| evolutionary_generate(&b, &e2t, &cap, &images, g, &cfg, &NullClock).unwrap();

    let one = run(1);
    assert_eq!(one.len(), 1);
    let entry = &one[0];
    assert_eq!(entry.parents.len(), 2);
    let expect = fuse_prompts(&entry.parents[0], &entry.parents[1], b.seq_len(), b.tokenizer()).unwrap();
    assert_eq!(entry.prompt, expect);
    let sep = b.tokenizer().token_id("and").unwrap();
    let ids = entry.prompt.token_ids();
    let cut = entry.parents[0].len();
    assert_eq!(&ids[..cut], entry.parents[0].token_ids());
    assert_eq!(ids[cut], sep);
    assert!(ids.len() > cut + 1, "second parent missing from {}", entry.prompt);

    let three = run(3);
    assert_eq!(three.len(), 3);
    assert_eq!(three[0], one[0]);
    assert_eq!(three, run(3));
    for (g, e) in three.iter().enumerate() {
        assert_eq!(e.generation, g);
    }
}

#[test]
fn evolution_errors_carry_the_generation() {
    let b = backend();
    let fx = fixture_suite(&b, 2, 7, 0).unwrap();
    let e2t = bundle(&b, 40, &quick_config());
    let images: Vec<_> = fx.iter().map(|f| f.target.clone()).collect();
    let cfg = InversionConfig { max_epoch: 2, ..Default::default() };
    let only_first = FixtureCaptioner::from_fixtures(&fx[..1]);
    let err = evolutionary_generate(&b, &e2t, &only_first, &images, 2, &cfg, &NullClock).unwrap_err();
    assert!(matches!(err, Error::Generation { generation: 0, .. }), "{err}");
    let cap = FixtureCaptioner::from_fixtures(&fx);
    assert!(evolutionary_generate(&b, &e2t, &cap, &images[..1], 1, &cfg, &NullClock).is_err());
    assert!(evolutionary_generate(&b, &e2t, &cap, &images, 0, &cfg, &NullClock).is_err());
}
