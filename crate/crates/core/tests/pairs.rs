use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use storymoral_core::corpus::synthetic::{fixture_corpus, FixtureSpec};
use storymoral_core::pairs::*;

fn c2(n: usize) -> usize {
    n * (n - 1) / 2
}

#[test]
fn reference_shape_counts() {
    let c = fixture_corpus(&FixtureSpec::reference_shaped(1).with_models(&["gpt-4o", "gemini"]));
    assert_eq!(c.passages.len(), 14 * 14);
    let o = PairOptions::default();
    assert_eq!(enumerate_pairs(&c, PairKind::HhIntra, &o).len(), 196 * c2(3));
    let inter = enumerate_pairs(&c, PairKind::HhInter, &o);
    assert_eq!(inter.len(), 14 * (c2(42) - 14 * c2(3)));
    assert_eq!(inter.len(), 11_466);
    let mm = enumerate_pairs(&c, PairKind::MmInter, &o);
    let mut per: BTreeMap<(String, String), usize> = BTreeMap::new();
    for p in &mm {
        *per.entry((p.story_id.clone(), p.model_id.clone().unwrap())).or_default() += 1;
    }
    assert_eq!(per.len(), 28);
    assert!(per.values().all(|&n| n == c2(14)));
    assert_eq!(enumerate_pairs(&c, PairKind::HmIntra, &o).len(), 196 * 3 * 2);

    let h1 = enumerate_pairs(&c, PairKind::H1Condition, &o);
    let original = h1
        .iter()
        .filter(|p| classify_h1(p) == Some(TranslatedCondition::BothOriginal))
        .count();
    assert_eq!(original, 14 * 3);
    assert_eq!(h1.len() - original, 546);
}

#[test]
fn word_counts_and_standardize() {
    assert_eq!(storymoral_core::text::word_count("Looks can be deceiving."), 4);
    assert_eq!(storymoral_core::text::word_count(""), 0);
    let z = standardize(&[1.0, 2.0, 3.0]).unwrap();
    let k = (1.5f64).sqrt();
    for (a, b) in z.iter().zip([-k, 0.0, k]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(standardize(&[2.0, 2.0]).is_err());
    let again = standardize(&z).unwrap();
    for (a, b) in z.iter().zip(&again) {
        assert!((a - b).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pair_invariants(seed in 0u64..500, discarded in 0usize..2, include in any::<bool>()) {
        let mut spec = FixtureSpec::grid(3, 4).with_models(&["m1", "m2"]);
        spec.seed = seed;
        spec.discarded_per_cell = discarded;
        let c = fixture_corpus(&spec);
        let o = PairOptions { include_discarded: include, ..Default::default() };
        for kind in [PairKind::HhIntra, PairKind::HmIntra, PairKind::HhInter, PairKind::MmInter] {
            let pairs = enumerate_pairs(&c, kind, &o);
            let mut seen = BTreeSet::new();
            for p in &pairs {
                prop_assert!(p.moral_a != p.moral_b);
                let key = if p.moral_a < p.moral_b {
                    (p.moral_a.clone(), p.moral_b.clone())
                } else {
                    (p.moral_b.clone(), p.moral_a.clone())
                };
                prop_assert!(seen.insert(key), "pair emitted twice");
                let (a, b) = (c.moral(&p.moral_a).unwrap(), c.moral(&p.moral_b).unwrap());
                prop_assert_eq!(kind_of(a, b), Some(kind));
                prop_assert_eq!(&a.story_id, &b.story_id);
                prop_assert_eq!(&p.language_pair_key, &language_pair_key(&p.lang_a, &p.lang_b));
                if !include {
                    prop_assert!(!a.discarded && !b.discarded);
                }
            }
        }
    }
}
