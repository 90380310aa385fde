#[path = "../common/mod.rs"]
mod common;

use std::collections::BTreeMap;

use normlab::backend::{plug_in_kl, BackendConfig, BackendError, Corpus, PatternBackend, EOS};
use normlab::certify::epsilon_similar;
use normlab::seq::Sequence;
use proptest::prelude::*;

use common::{kl, random_corpus, BigramOracle};

fn trained(lambda: f64, corpus: &[String]) -> Box<dyn PatternBackend> {
    let mut b = BackendConfig { smoothing_lambda: lambda, ..BackendConfig::table() }.build().unwrap();
    b.consolidate(&Corpus::from_texts(corpus)).unwrap();
    b
}

/// Outcomes of length ≤ 2 under the bigram oracle: stop at once, or one
/// token followed by anything.
fn two_step(o: &BigramOracle, ctx: &str) -> BTreeMap<Vec<String>, f64> {
    let mut out = BTreeMap::new();
    for (t, p) in o.next(ctx) {
        if t == EOS {
            out.insert(vec![t], p);
            continue;
        }
        for (u, q) in o.next(&t) {
            out.insert(vec![t.clone(), u], p * q);
        }
    }
    out
}

#[test]
fn hand_built_counts() {
    let corpus: Vec<String> = ["a b", "a b", "a b", "a c", "x c", "x c", "x b"].iter().map(|s| s.to_string()).collect();
    let b = trained(0.5, &corpus);
    // support {a, b, c, x, </s>}: after a counts b3 c1, after x counts c2 b1
    let p = [0.5f64, 3.5, 1.5, 0.5, 0.5].map(|c| c / 6.5);
    let q = [0.5f64, 1.5, 2.5, 0.5, 0.5].map(|c| c / 5.5);
    let want: f64 = p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum();
    let got = b.kl_divergence(&"a".into(), &"x".into(), 1).unwrap();
    assert!(got.is_exact());
    assert!((got.value - want).abs() < 1e-12, "{} vs {want}", got.value);
}

#[test]
fn asymmetry_witness() {
    let corpus: Vec<String> = ["a b", "a b", "a b", "a b", "a c", "x c", "x b"].iter().map(|s| s.to_string()).collect();
    let b = trained(0.1, &corpus);
    let ax = b.kl_divergence(&"a".into(), &"x".into(), 1).unwrap().value;
    let xa = b.kl_divergence(&"x".into(), &"a".into(), 1).unwrap().value;
    assert!((ax - xa).abs() > 1e-6, "{ax} {xa}");
}

#[test]
fn horizon_two_matches_enumeration() {
    for seed in 0..20 {
        let corpus = random_corpus(seed, 6);
        let b = trained(0.5, &corpus);
        let o = BigramOracle::new(&corpus, 0.5);
        let got = b.kl_divergence(&"w0".into(), &"w1".into(), 2).unwrap().value;
        let (p, q) = (two_step(&o, "w0"), two_step(&o, "w1"));
        let want: f64 = p.iter().map(|(x, pv)| pv * (pv / q[x]).ln()).sum();
        assert!((got - want).abs() < 1e-9, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn enumeration_budget_is_enforced() {
    let corpus = random_corpus(1, 40);
    let mut config = BackendConfig::table();
    config.enumeration_budget = 500;
    let mut b = config.build().unwrap();
    b.consolidate(&Corpus::from_texts(&corpus)).unwrap();
    assert!(matches!(b.kl_divergence(&"w0".into(), &"w1".into(), 3), Err(BackendError::VocabularyTooLarge { .. })));
    assert!(b.kl_divergence(&"w0".into(), &"w1".into(), 1).is_ok());
    assert!(b.kl_divergence(&"w0".into(), &"w1".into(), 0).is_err());
}

#[test]
fn epsilon_similarity_follows_kl() {
    let corpus: Vec<String> = ["hello there", "hi there", "goodbye now", "goodbye now"].iter().map(|s| s.to_string()).collect();
    let b = trained(0.5, &corpus);
    let c = Sequence::new("so hello");
    let same = epsilon_similar(b.as_ref(), &"hello".into(), &"hi".into(), &c, 1e-9, 1).unwrap();
    assert_eq!((same.similar, same.kl.value), (Some(true), 0.0));
    let diff = epsilon_similar(b.as_ref(), &"hello".into(), &"goodbye".into(), &c, 0.1, 1).unwrap();
    assert_eq!(diff.similar, Some(false));
    assert!(epsilon_similar(b.as_ref(), &"hello".into(), &"hi".into(), &c, 0.0, 1).is_err());
}

#[test]
fn plug_in_matches_hand_computation() {
    let p: Vec<String> = ["a", "a", "b"].map(String::from).to_vec();
    let q: Vec<String> = ["a", "b", "b"].map(String::from).to_vec();
    // pseudo-count 1 over outcomes {a, b}: p = (3/5, 2/5), q = (2/5, 3/5)
    let want = 0.6 * (1.5f64).ln() + 0.4 * (2.0f64 / 3.0).ln();
    assert!((plug_in_kl(&p, &q, 1.0) - want).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn exact_kl_matches_oracle(seed in 0u64..1_000_000, vocab in 2usize..50, i in 0usize..50, j in 0usize..50) {
        let corpus = random_corpus(seed, vocab);
        let b = trained(0.5, &corpus);
        let o = BigramOracle::new(&corpus, 0.5);
        let (c1, c2) = (format!("w{}", i % vocab), format!("w{}", j % vocab));
        let got = b.kl_divergence(&Sequence::new(&c1), &Sequence::new(&c2), 1).unwrap().value;
        prop_assert!((got - kl(&o.next(&c1), &o.next(&c2))).abs() < 1e-9);
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn self_divergence_is_zero(seed in 0u64..1_000_000, vocab in 2usize..20, i in 0usize..20, h in 1usize..3) {
        let corpus = random_corpus(seed, vocab);
        let b = trained(0.5, &corpus);
        let c = Sequence::new(format!("w{}", i % vocab));
        prop_assert_eq!(b.kl_divergence(&c, &c, h).unwrap().value, 0.0);
    }
}
