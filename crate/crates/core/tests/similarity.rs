use std::collections::BTreeMap;

use dashtalk_core::similarity::{SimilarityProvider, TrigramCosine};
use proptest::prelude::*;

/// Independent brute-force trigram cosine: sorted maps, integer dot
/// products, one square root at the end.
fn oracle(a: &str, b: &str) -> f64 {
    fn grams(s: &str) -> BTreeMap<String, i64> {
        let norm: Vec<char> = s
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase()
            .chars()
            .collect();
        let mut m = BTreeMap::new();
        if norm.len() < 3 {
            if !norm.is_empty() {
                m.insert(norm.iter().collect(), 1);
            }
            return m;
        }
        for i in 0..norm.len() - 2 {
            *m.entry(norm[i..i + 3].iter().collect()).or_insert(0) += 1;
        }
        m
    }
    let (ga, gb) = (grams(a), grams(b));
    if ga.is_empty() || gb.is_empty() {
        return 0.0;
    }
    if ga == gb {
        return 1.0;
    }
    let dot: i64 = ga.iter().map(|(k, v)| v * gb.get(k).copied().unwrap_or(0)).sum();
    let na: i64 = ga.values().map(|v| v * v).sum();
    let nb: i64 = gb.values().map(|v| v * v).sum();
    dot as f64 / ((na * nb) as f64).sqrt()
}

/// `qotd-service` has 10 distinct trigrams, `qotd-web service` 14, and they
/// share 8: 8 / sqrt(10 * 14).
const QOTD_PAIR: f64 = 0.676_123_403_782_813_2;

#[test]
fn qotd_pair_is_pinned() {
    assert!((QOTD_PAIR - 8.0 / 140f64.sqrt()).abs() < 1e-15);
    assert!((oracle("qotd-service", "qotd-web service") - QOTD_PAIR).abs() < 1e-12);
    assert!((TrigramCosine::score("qotd-service", "qotd-web service") - QOTD_PAIR).abs() < 1e-12);
}

#[test]
fn named_examples() {
    assert_eq!(TrigramCosine.similarity("catalogue", "catalogue"), 1.0);
    assert!(TrigramCosine.similarity("catalogue", "zzzz") < 0.1);
    assert!((TrigramCosine::score("robot-shop service", "robot-shop shipping service") - 0.8).abs() < 1e-12);
}

fn name() -> impl Strategy<Value = String> {
    "[a-e -]{0,14}"
}

proptest! {
    #[test]
    fn agrees_with_oracle(a in name(), b in name()) {
        prop_assert!((TrigramCosine::score(&a, &b) - oracle(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn symmetric_and_bounded(a in name(), b in name()) {
        let s = TrigramCosine::score(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, TrigramCosine::score(&b, &a));
    }

    #[test]
    fn identity_is_one(a in "[a-z][a-z0-9 -]{0,20}") {
        prop_assert_eq!(TrigramCosine::score(&a, &a), 1.0);
    }
}
