use std::collections::BTreeSet;

use proptest::prelude::*;
use vucal::tinylm::*;
use vucal::Error;

fn planted(seed: u64) -> ModelWeights {
    let cfg = ModelConfig::planted_default(seed);
    let hedges: BTreeSet<TokenId> = cfg.vocab().hedge_ids().into_iter().collect();
    build_planted_model(&cfg, &hedges, 2).unwrap()
}

fn small_random() -> ModelWeights {
    let cfg = ModelConfig {
        vocab_size: MIN_VOCAB,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        context_len: 32,
        seed: 5,
    };
    ModelWeights::random(&cfg, 0.2).unwrap()
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f32::MIN, f32::max) as f64;
    let e: Vec<f64> = logits.iter().map(|&l| (l as f64 - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

fn hedge_mass(w: &ModelWeights, question: &str, specs: &[InterventionSpec]) -> f64 {
    let vocab = w.config.vocab();
    let out = forward(w, &vocab.encode_prompt(question), specs, &BTreeSet::new()).unwrap();
    let p = softmax(&out.logits);
    vocab.hedge_ids().iter().map(|&t| p[t as usize]).sum()
}

fn steer(w: &ModelWeights, alpha: f32) -> Vec<InterventionSpec> {
    let p = w.planted.as_ref().unwrap();
    vec![InterventionSpec {
        layers: vec![3, 4, 5],
        direction: p.direction.clone(),
        alpha,
        positions: Positions::AllTokens,
    }]
}

#[test]
fn planted_model_records_unit_direction() {
    let w = planted(3);
    let p = w.planted.as_ref().unwrap();
    let n: f32 = p.direction.iter().map(|x| x * x).sum::<f32>().sqrt();
    assert!((n - 1.0).abs() < 1e-5);
    assert_eq!(p.injection_layer, 2);
    assert_eq!(w.config.d_model, 64);
    assert_eq!(w.config.n_layers, 6);
}

#[test]
fn planted_build_is_deterministic() {
    assert_eq!(planted(4).to_json().unwrap(), planted(4).to_json().unwrap());
    assert_ne!(planted(4).tok_emb, planted(5).tok_emb);
}

#[test]
fn weights_round_trip_exactly() {
    let w = planted(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    w.save(&path).unwrap();
    assert_eq!(ModelWeights::load(&path).unwrap(), w);
}

#[test]
fn uncertain_marker_raises_hedge_mass() {
    let w = planted(2);
    let plain = hedge_mass(&w, "abcab?", &[]);
    let unsure = hedge_mass(&w, "<|uncertain|>abcab?", &[]);
    let sure = hedge_mass(&w, "<|certain|>abcab?", &[]);
    assert!(unsure > plain && plain > sure, "{sure} {plain} {unsure}");
}

#[test]
fn steering_along_planted_direction_is_monotone() {
    let w = planted(2);
    let mut last = -1.0;
    for a in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let m = hedge_mass(&w, "qwerty?", &steer(&w, a));
        assert!(m > last, "alpha {a}: {m} <= {last}");
        last = m;
    }
}

#[test]
fn zero_alpha_matches_no_intervention() {
    let w = planted(2);
    let vocab = w.config.vocab();
    let prompt = vocab.encode_prompt("zzyx?");
    let none = forward(&w, &prompt, &[], &BTreeSet::new()).unwrap();
    let zero = forward(&w, &prompt, &steer(&w, 0.0), &BTreeSet::new()).unwrap();
    assert_eq!(none.logits, zero.logits);
}

#[test]
fn last_token_steering_leaves_prompt_cache_alone() {
    let w = planted(2);
    let vocab = w.config.vocab();
    let prompt = vocab.encode_prompt("mnop?");
    let mut last = steer(&w, 2.0);
    last[0].positions = Positions::LastToken;
    let all = steer(&w, 2.0);
    let a = forward(&w, &prompt, &all, &BTreeSet::new()).unwrap();
    let b = forward(&w, &prompt, &last, &BTreeSet::new()).unwrap();
    assert_ne!(a.logits, b.logits);
}

#[test]
fn generate_is_reproducible_and_seed_sensitive() {
    let w = planted(6);
    let prompt = w.config.vocab().encode_prompt("abcdefgh?");
    let p = SamplingParams::high(11);
    let a = generate(&w, &prompt, &p, &[], &BTreeSet::new()).unwrap();
    let b = generate(&w, &prompt, &p, &[], &BTreeSet::new()).unwrap();
    assert_eq!(a, b);
    let texts: BTreeSet<String> = (0..20)
        .map(|s| {
            generate(&w, &prompt, &p.with_seed(s), &[], &BTreeSet::new())
                .unwrap()
                .text
        })
        .collect();
    assert!(texts.len() > 1);
}

#[test]
fn generation_logprobs_match_forward() {
    let w = small_random();
    let vocab = w.config.vocab();
    let prompt = vocab.encode_prompt("hi");
    let p = SamplingParams {
        max_new_tokens: 5,
        ..SamplingParams::high(3)
    };
    let g = generate(&w, &prompt, &p, &[], &BTreeSet::new()).unwrap();
    let mut seq = prompt.clone();
    for (t, lp) in g.tokens.iter().zip(&g.logprobs) {
        let out = forward(&w, &seq, &[], &BTreeSet::new()).unwrap();
        let ls = vucal::tinylm::tensor::log_softmax(&out.logits);
        assert!((ls[*t as usize] - lp).abs() < 1e-4);
        seq.push(*t);
    }
}

#[test]
fn captured_activations_are_last_prompt_position() {
    let w = planted(1);
    let prompt = w.config.vocab().encode_prompt("abc?");
    let all: BTreeSet<usize> = (0..6).collect();
    let g = generate(&w, &prompt, &SamplingParams::low(0), &[], &all).unwrap();
    let direct = capture_last_token_activations(&w, &prompt).unwrap();
    assert_eq!(g.activations.unwrap(), direct);
}

#[test]
fn bad_intervention_is_input_error() {
    let w = planted(1);
    let prompt = w.config.vocab().encode_prompt("a?");
    let spec = InterventionSpec {
        layers: vec![9],
        direction: vec![0.0; 64],
        alpha: 1.0,
        positions: Positions::AllTokens,
    };
    assert!(matches!(
        forward(&w, &prompt, &[spec], &BTreeSet::new()),
        Err(Error::Input(_))
    ));
}

#[test]
fn injection_layer_out_of_range_is_config_error() {
    let cfg = ModelConfig::planted_default(0);
    let hedges: BTreeSet<TokenId> = cfg.vocab().hedge_ids().into_iter().collect();
    assert!(matches!(
        build_planted_model(&cfg, &hedges, 6),
        Err(Error::Config(_))
    ));
}

proptest! {
    #[test]
    fn truncation_set_is_a_distribution(
        logits in prop::collection::vec(-20.0f32..20.0, 2..64),
        temperature in 0.05f64..3.0,
        top_p in 0.05f64..=1.0,
        top_k in 1usize..80,
    ) {
        let p = SamplingParams { temperature, top_p, top_k, max_new_tokens: 1, rng_seed: 0 };
        let set = truncation_set(&logits, &p);
        prop_assert!(!set.is_empty());
        prop_assert!(set.len() <= top_k.min(logits.len()));
        let total: f64 = set.iter().map(|(_, q)| q).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(set.windows(2).all(|w| w[0].1 >= w[1].1));
        // the arg-max always survives
        let best = logits
            .iter()
            .enumerate()
            .fold((0, f32::MIN), |b, (i, &l)| if l > b.1 { (i, l) } else { b })
            .0;
        prop_assert!(set.iter().any(|(t, _)| *t as usize == best));
    }
}
