//! Calibration metrics before and after steering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::{normalize_answer, AnswerSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// All inputs were equal, so no split exists.
    pub degenerate: bool,
}

fn sse(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// 1-D two-means: the sorted split with the least within-cluster squared
/// error (first one on ties); threshold at the midpoint of the cluster means.
pub fn select_threshold(values: &[f64]) -> Result<Threshold> {
    if values.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite value".into()));
    }
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    if xs[0] == xs[xs.len() - 1] {
        return Ok(Threshold {
            value: xs[0],
            degenerate: true,
        });
    }
    let mut best = (f64::INFINITY, 1);
    for k in 1..xs.len() {
        let cost = sse(&xs[..k]) + sse(&xs[k..]);
        if cost < best.0 {
            best = (cost, k);
        }
    }
    let k = best.1;
    Ok(Threshold {
        value: (mean(&xs[..k]) + mean(&xs[k..])) / 2.0,
        degenerate: false,
    })
}

/// Decides whether an answer matches any gold alias.
pub trait CorrectnessOracle: Sync {
    fn correct(&self, answer: &str, golds: &[String]) -> Result<bool>;
}

/// Default oracle: some normalised gold occurs in the normalised answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContainmentCorrectness;

impl CorrectnessOracle for ContainmentCorrectness {
    fn correct(&self, answer: &str, golds: &[String]) -> Result<bool> {
        Ok(is_correct(answer, golds))
    }
}

pub fn is_correct(answer: &str, golds: &[String]) -> bool {
    let a = normalize_answer(answer);
    golds
        .iter()
        .map(|g| normalize_answer(g))
        .any(|g| !g.is_empty() && a.contains(&g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseCategory {
    Correct,
    Hallucinated,
    PartlyAbstained,
    ConsistentlyAbstained,
}

pub fn categorize(
    set: &AnswerSet,
    golds: &[String],
    oracle: &dyn CorrectnessOracle,
) -> Result<ResponseCategory> {
    let flag = |a: &crate::uncertainty::Answer| {
        a.abstained
            .ok_or_else(|| Error::Input(format!("{}: abstention not scored", set.question_id)))
    };
    if flag(&set.most_likely)? {
        for s in &set.samples {
            if !flag(s)? {
                return Ok(ResponseCategory::PartlyAbstained);
            }
        }
        return Ok(ResponseCategory::ConsistentlyAbstained);
    }
    Ok(if oracle.correct(&set.most_likely.text, golds)? {
        ResponseCategory::Correct
    } else {
        ResponseCategory::Hallucinated
    })
}

/// One record as seen by the mitigation report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub category: ResponseCategory,
    pub su_norm: f64,
    pub vu: f64,
}

impl MetricRecord {
    pub fn abstained(&self) -> bool {
        matches!(
            self.category,
            ResponseCategory::PartlyAbstained | ResponseCategory::ConsistentlyAbstained
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confident_hallucination_rate: f64,
    pub correct_rate: f64,
    pub refusal_rate: f64,
    pub disagreement_rate: f64,
    /// `None` when either series is constant or there is one record.
    pub pearson_su_vu: Option<f64>,
    /// `None` when there are no hallucinated records.
    pub vu_incorrect_mean: Option<f64>,
    /// `None` when there are no correct records.
    pub vu_correct_mean: Option<f64>,
    pub tau_su: f64,
    pub tau_vu: f64,
    pub n: usize,
}

pub fn mitigation_report(
    records: &[MetricRecord],
    tau_su: f64,
    tau_vu: f64,
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(Error::Input("no records to report on".into()));
    }
    let n = records.len();
    let frac = |pred: &dyn Fn(&MetricRecord) -> bool| {
        records.iter().filter(|r| pred(r)).count() as f64 / n as f64
    };
    let cond_mean = |cat: ResponseCategory| {
        let v: Vec<f64> = records
            .iter()
            .filter(|r| r.category == cat)
            .map(|r| r.vu)
            .collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    let su: Vec<f64> = records.iter().map(|r| r.su_norm).collect();
    let vu: Vec<f64> = records.iter().map(|r| r.vu).collect();
    let pearson_su_vu = match pearson(&su, &vu) {
        Ok(r) => Some(r),
        Err(Error::UndefinedMetric(_)) => None,
        Err(_) if n < 2 => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        confident_hallucination_rate: frac(&|r| {
            r.category == ResponseCategory::Hallucinated && r.vu < tau_vu
        }),
        correct_rate: frac(&|r| r.category == ResponseCategory::Correct),
        refusal_rate: frac(&|r| r.abstained()),
        disagreement_rate: frac(&|r| (r.su_norm >= tau_su) != (r.vu >= tau_vu)),
        pearson_su_vu,
        vu_incorrect_mean: cond_mean(ResponseCategory::Hallucinated),
        vu_correct_mean: cond_mean(ResponseCategory::Correct),
        tau_su,
        tau_vu,
        n,
    })
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input(
            "pearson needs two equal-length series of at least 2".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric(
            "correlation with a constant series".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn rows(&self) -> [(&'static str, Option<f64>); 7] {
        [
            (
                "confident_hallucination_rate",
                Some(self.confident_hallucination_rate),
            ),
            ("correct_rate", Some(self.correct_rate)),
            ("refusal_rate", Some(self.refusal_rate)),
            ("disagreement_rate", Some(self.disagreement_rate)),
            ("pearson_su_vu", self.pearson_su_vu),
            ("vu_incorrect_mean", self.vu_incorrect_mean),
            ("vu_correct_mean", self.vu_correct_mean),
        ]
    }

    pub fn summary_line(&self) -> String {
        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        format!(
            "n={} halluc={:.4} correct={:.4} refusal={:.4} disagree={:.4} pearson={} vu_incorrect={} vu_correct={}",
            self.n,
            self.confident_hallucination_rate,
            self.correct_rate,
            self.refusal_rate,
            self.disagreement_rate,
            f(self.pearson_su_vu),
            f(self.vu_incorrect_mean),
            f(self.vu_correct_mean)
        )
    }
}

/// `metric,before,after` rows; undefined values are empty cells.
pub fn report_csv(before: &MetricsReport, after: &MetricsReport) -> String {
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut out = String::from("metric,before,after\n");
    for ((name, b), (_, a)) in before.rows().into_iter().zip(after.rows()) {
        out.push_str(&format!("{name},{},{}\n", cell(b), cell(a)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::Answer;

    #[test]
    fn threshold_worked_examples() {
        let t = select_threshold(&[0.0, 0.1, 0.9, 1.0]).unwrap();
        assert!((t.value - 0.5).abs() < 1e-12 && !t.degenerate);
        let t = select_threshold(&[0.05, 0.05, 0.9, 0.95, 1.0]).unwrap();
        assert!((t.value - 0.5).abs() < 1e-9);
        let t = select_threshold(&[0.3; 4]).unwrap();
        assert_eq!((t.value, t.degenerate), (0.3, true));
        assert!(select_threshold(&[0.3]).is_err());
    }

    #[test]
    fn correctness() {
        let g = vec!["Harlem River".to_string()];
        assert!(is_correct("The other river is the Harlem River.", &g));
        assert!(is_correct("harlem  river!!", &g));
        assert!(!is_correct("London.", &["Paris".to_string()]));
    }

    fn ans(text: &str, abstained: bool) -> Answer {
        Answer {
            text: text.into(),
            seed: 0,
            sum_logprob: 0.0,
            vu: None,
            abstained: Some(abstained),
        }
    }

    #[test]
    fn categories() {
        let g = vec!["Paris".to_string()];
        let mut s = AnswerSet {
            question_id: "q".into(),
            question: "q?".into(),
            most_likely: ans("I don't know.", true),
            samples: vec![ans("I don't know.", true); 10],
            clusters: None,
            activations: None,
        };
        let o = ContainmentCorrectness;
        assert_eq!(
            categorize(&s, &g, &o).unwrap(),
            ResponseCategory::ConsistentlyAbstained
        );
        s.samples[3] = ans("It is Paris.", false);
        assert_eq!(
            categorize(&s, &g, &o).unwrap(),
            ResponseCategory::PartlyAbstained
        );
        s.most_likely = ans("It is Paris.", false);
        assert_eq!(categorize(&s, &g, &o).unwrap(), ResponseCategory::Correct);
        s.most_likely = ans("It is Rome.", false);
        assert_eq!(
            categorize(&s, &g, &o).unwrap(),
            ResponseCategory::Hallucinated
        );
    }

    #[test]
    fn report_trivial_cases() {
        let recs: Vec<MetricRecord> = (0..5)
            .map(|i| MetricRecord {
                category: ResponseCategory::Correct,
                su_norm: i as f64 / 5.0,
                vu: 0.0,
            })
            .collect();
        let r = mitigation_report(&recs, 0.5, 0.5).unwrap();
        assert_eq!((r.confident_hallucination_rate, r.correct_rate), (0.0, 1.0));
        assert_eq!(r.pearson_su_vu, None);
        assert_eq!(r.vu_incorrect_mean, None);

        let recs: Vec<MetricRecord> = (0..6)
            .map(|i| MetricRecord {
                category: ResponseCategory::Hallucinated,
                su_norm: i as f64 / 6.0,
                vu: i as f64 / 6.0,
            })
            .collect();
        let r = mitigation_report(&recs, 0.4, 0.4).unwrap();
        assert_eq!(r.disagreement_rate, 0.0);
        assert!((r.pearson_su_vu.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_extremes() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson(&x, &[1.0; 4]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn csv_layout() {
        let recs = [MetricRecord {
            category: ResponseCategory::Correct,
            su_norm: 0.0,
            vu: 0.0,
        }; 2];
        let r = mitigation_report(&recs, 0.5, 0.5).unwrap();
        let csv = report_csv(&r, &r);
        assert_eq!(csv.lines().count(), 8);
        assert!(csv.contains("pearson_su_vu,,\n"));
    }
}
