use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vucal::metrics::*;
use vucal::Error;

/// Tries every split of the sorted values and keeps the first cheapest one.
fn exhaustive_split(values: &[f64]) -> f64 {
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    let stats = |s: &[f64]| {
        let mut sum = 0.0;
        for x in s {
            sum += x;
        }
        let m = sum / s.len() as f64;
        let mut e = 0.0;
        for x in s {
            e += (x - m) * (x - m);
        }
        (m, e)
    };
    let mut best: Option<(f64, f64)> = None;
    for k in 1..xs.len() {
        let (ml, el) = stats(&xs[..k]);
        let (mr, er) = stats(&xs[k..]);
        let cost = el + er;
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, (ml + mr) / 2.0));
        }
    }
    best.unwrap().1
}

fn rec(category: ResponseCategory, su_norm: f64, vu: f64) -> MetricRecord {
    MetricRecord {
        category,
        su_norm,
        vu,
    }
}

#[test]
fn threshold_matches_oracle_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        assert_eq!(select_threshold(&xs).unwrap().value, exhaustive_split(&xs));
    }
}

#[test]
fn threshold_rejects_bad_input() {
    assert!(matches!(select_threshold(&[]), Err(Error::Input(_))));
    assert!(matches!(
        select_threshold(&[0.1, f64::NAN]),
        Err(Error::Input(_))
    ));
}

#[test]
fn report_on_hand_built_records() {
    use ResponseCategory::*;
    let records = vec![
        rec(Correct, 0.1, 0.1),
        rec(Correct, 0.2, 0.3),
        rec(Hallucinated, 0.9, 0.2),
        rec(Hallucinated, 0.8, 0.9),
        rec(PartlyAbstained, 0.7, 0.8),
        rec(ConsistentlyAbstained, 0.0, 1.0),
    ];
    let r = mitigation_report(&records, 0.5, 0.5).unwrap();
    assert_eq!(r.n, 6);
    assert!((r.confident_hallucination_rate - 1.0 / 6.0).abs() < 1e-12);
    assert!((r.correct_rate - 2.0 / 6.0).abs() < 1e-12);
    assert!((r.refusal_rate - 2.0 / 6.0).abs() < 1e-12);
    // (0.9, 0.2) and (0.0, 1.0) fall on opposite sides
    assert!((r.disagreement_rate - 2.0 / 6.0).abs() < 1e-12);
    assert!((r.vu_incorrect_mean.unwrap() - 0.55).abs() < 1e-12);
    assert!((r.vu_correct_mean.unwrap() - 0.2).abs() < 1e-12);
    let su: Vec<f64> = records.iter().map(|r| r.su_norm).collect();
    let vu: Vec<f64> = records.iter().map(|r| r.vu).collect();
    assert_eq!(r.pearson_su_vu, Some(pearson(&su, &vu).unwrap()));
    let back: MetricsReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn undefined_metrics_are_none() {
    let records = vec![
        rec(ResponseCategory::Correct, 0.5, 0.1),
        rec(ResponseCategory::Correct, 0.5, 0.2),
    ];
    let r = mitigation_report(&records, 0.5, 0.5).unwrap();
    assert_eq!(r.pearson_su_vu, None);
    assert_eq!(r.vu_incorrect_mean, None);
    assert!(r.summary_line().contains("pearson=n/a"));
    assert!(report_csv(&r, &r).contains("pearson_su_vu,,\n"));
    assert!(matches!(
        mitigation_report(&[], 0.5, 0.5),
        Err(Error::Input(_))
    ));
}

#[test]
fn pearson_against_textbook_value() {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let y = [2.0, 4.0, 5.0, 4.0, 5.0];
    // r = 6 / sqrt(10 * 6)
    assert!((pearson(&x, &y).unwrap() - 6.0 / 60f64.sqrt()).abs() < 1e-12);
    assert!(matches!(
        pearson(&x, &[1.0; 5]),
        Err(Error::UndefinedMetric(_))
    ));
}

proptest! {
    #[test]
    fn threshold_lies_between_extremes(xs in prop::collection::vec(-100.0f64..100.0, 2..60)) {
        let t = select_threshold(&xs).unwrap();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(t.value >= lo && t.value <= hi);
        if t.degenerate {
            prop_assert_eq!(t.value, lo);
        } else {
            prop_assert_eq!(t.value, exhaustive_split(&xs));
        }
    }

    #[test]
    fn rates_are_fractions(
        cats in prop::collection::vec(0usize..4, 1..50),
        su in prop::collection::vec(0.0f64..1.0, 50),
        vu in prop::collection::vec(0.0f64..1.0, 50),
    ) {
        use ResponseCategory::*;
        let all = [Correct, Hallucinated, PartlyAbstained, ConsistentlyAbstained];
        let records: Vec<MetricRecord> = cats
            .iter()
            .enumerate()
            .map(|(i, &c)| rec(all[c], su[i], vu[i]))
            .collect();
        let r = mitigation_report(&records, 0.5, 0.5).unwrap();
        for v in [r.confident_hallucination_rate, r.correct_rate, r.refusal_rate, r.disagreement_rate] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.correct_rate + r.refusal_rate <= 1.0 + 1e-12);
        if let Some(p) = r.pearson_su_vu {
            prop_assert!((-1.0..=1.0).contains(&p));
        }
    }
}
