use std::collections::BTreeSet;

use proptest::prelude::*;
use vucal::tinylm::{build_planted_model, ModelConfig, SamplingParams, TokenId};
use vucal::uncertainty::*;
use vucal::Error;

fn assignment_of(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect()
}

/// Entropy computed straight from counts, without clustering.
fn entropy_oracle(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

#[test]
fn entropy_reference_values() {
    assert_eq!(semantic_entropy(&assignment_of(&[10])).unwrap(), 0.0);
    let mixed = semantic_entropy(&assignment_of(&[3, 4, 1, 1, 1])).unwrap();
    assert!((mixed - 1.42).abs() < 0.005, "{mixed}");
    let single = semantic_entropy(&(0..10).collect::<Vec<_>>()).unwrap();
    assert!((single - 2.30).abs() < 0.005, "{single}");
    assert!((normalize_su(single, 10).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn containment_clusters_paraphrases() {
    let answers: Vec<String> = ["Paris", "It is Paris.", "Lyon", "the paris", "Marseille"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(
        cluster_semantic(&answers, &ContainmentOracle).unwrap(),
        vec![0, 0, 1, 0, 2]
    );
}

#[test]
fn custom_oracle_closure() {
    let answers: Vec<String> = ["a1", "b1", "a2", "b2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let first_letter = |a: &str, b: &str| a[..1] == b[..1];
    assert_eq!(
        cluster_semantic(&answers, &first_letter).unwrap(),
        vec![0, 1, 0, 1]
    );
}

#[test]
fn lexical_scorer_orders_hedging() {
    let bank = PrototypeBank::shipped();
    let plain = score_vu_lexical("The capital is Paris.", &bank).unwrap();
    let hedged = score_vu_lexical("I'm not sure, but maybe it is Paris.", &bank).unwrap();
    assert!(hedged > plain, "{hedged} <= {plain}");
    assert!((0.0..=1.0).contains(&plain) && (0.0..=1.0).contains(&hedged));
    assert!(matches!(
        score_vu_lexical("  ", &bank),
        Err(Error::Input(_))
    ));
}

#[test]
fn abstention_detection_uses_shipped_phrases() {
    let phrases = shipped_abstention_phrases();
    assert!(detect_abstention("I don't know.", &phrases));
    assert!(!detect_abstention("It is Paris.", &phrases));
    assert_eq!(
        parse_phrase_list("# c\n\nfoo\n  bar  \n"),
        vec!["foo", "bar"]
    );
}

#[test]
fn sampling_and_scoring_a_planted_question() {
    let cfg = ModelConfig::planted_default(2);
    let hedges: BTreeSet<TokenId> = cfg.vocab().hedge_ids().into_iter().collect();
    let w = build_planted_model(&cfg, &hedges, 2).unwrap();
    let capture: BTreeSet<usize> = (0..6).collect();
    let mut set = sample_answers(
        &w,
        "q1",
        "abcdefg?",
        10,
        &SamplingParams::high(5),
        &SamplingParams::low(6),
        &capture,
    )
    .unwrap();
    assert_eq!(set.samples.len(), 10);
    assert_eq!(set.activations.as_ref().unwrap().len(), 6);
    let scores = score_answer_set(
        &mut set,
        &LexicalScorer::shipped(),
        &ContainmentOracle,
        &shipped_abstention_phrases(),
    )
    .unwrap();
    set.validate().unwrap();
    assert!((0.0..=1.0).contains(&scores.su_norm));
    assert!((scores.su_norm - scores.su / 10f64.ln()).abs() < 1e-12);
    assert_eq!(scores_of(&set).unwrap(), scores);
    let back: AnswerSet = serde_json::from_str(&serde_json::to_string(&set).unwrap()).unwrap();
    assert_eq!(back, set);
}

#[test]
fn sampling_preconditions() {
    let cfg = ModelConfig::planted_default(2);
    let hedges: BTreeSet<TokenId> = cfg.vocab().hedge_ids().into_iter().collect();
    let w = build_planted_model(&cfg, &hedges, 2).unwrap();
    let (hi, lo) = (SamplingParams::high(0), SamplingParams::low(0));
    let none = BTreeSet::new();
    assert!(matches!(
        sample_answers(&w, "q", "a?", 1, &hi, &lo, &none),
        Err(Error::Input(_))
    ));
    assert!(matches!(
        sample_answers_with_seeds(&w, "q", "a?", &[4, 4], &hi, &lo, &none),
        Err(Error::SeedCollision { seed: 4 })
    ));
}

proptest! {
    #[test]
    fn entropy_matches_count_oracle(counts in prop::collection::vec(1usize..6, 1..8)) {
        let a = assignment_of(&counts);
        let se = semantic_entropy(&a).unwrap();
        prop_assert!((se - entropy_oracle(&counts)).abs() < 1e-12);
        prop_assert!(se >= 0.0 && se <= (a.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn derived_seeds_are_distinct(base in any::<u64>(), n in 2usize..200) {
        let s = derive_seeds(base, n);
        let uniq: BTreeSet<u64> = s.iter().copied().collect();
        prop_assert_eq!(uniq.len(), n);
        prop_assert_eq!(derive_seeds(base, n), s);
    }

    #[test]
    fn lexical_vu_in_unit_interval(text in "[a-zA-Z ,.'?]{1,40}") {
        let bank = PrototypeBank::shipped();
        if let Ok(v) = score_vu_lexical(&text, &bank) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn clustering_is_a_valid_partition(words in prop::collection::vec("[ab]{1,3}", 1..12)) {
        let a = cluster_semantic(&words, &ContainmentOracle).unwrap();
        prop_assert_eq!(a.len(), words.len());
        prop_assert_eq!(a[0], 0);
        let mut max = 0;
        for &c in &a {
            prop_assert!(c <= max + 1);
            max = max.max(c);
        }
    }
}
