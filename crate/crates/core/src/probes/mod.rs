//! Linear probes on hidden states and the logistic hallucination detector.

mod auroc;
pub mod logistic;
mod ridge;

use serde::{Deserialize, Serialize};

pub use auroc::{accuracy, auroc};
pub use logistic::{fit_irls, sigmoid, IrlsOptions, LogisticFit};
pub use ridge::ridge_fit;

use crate::error::{Error, Result};
use crate::metrics::CorrectnessOracle;
use crate::uncertainty::AnswerSet;
use crate::vuf::Activations;

pub const PROBE_SCHEMA: &str = "vucal-probe/1";
pub const DETECTOR_SCHEMA: &str = "vucal-detector/1";

pub const DEFAULT_RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    Vu,
    /// Normalised semantic entropy.
    Su,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Regressor,
    Classifier,
}

/// Where a probe's input vector comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeLayout {
    pub target: ProbeTarget,
    pub window: Vec<usize>,
    pub d_model: usize,
}

impl ProbeLayout {
    pub fn new(target: ProbeTarget, window: Vec<usize>, d_model: usize) -> Self {
        Self {
            target,
            window,
            d_model,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d_model * self.window.len()
    }
}

/// Concatenation of the window's layers, in window order.
pub fn hidden_features(
    activations: &Activations,
    window: &[usize],
    d_model: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(d_model * window.len());
    for l in window {
        let v = activations
            .get(l)
            .ok_or_else(|| Error::Input(format!("no activations captured at layer {l}")))?;
        if v.len() != d_model {
            return Err(Error::Input(format!(
                "layer {l} has width {}, expected {d_model}",
                v.len()
            )));
        }
        out.extend(v.iter().map(|&x| x as f64));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub schema_version: String,
    pub kind: ProbeKind,
    #[serde(flatten)]
    pub layout: ProbeLayout,
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Probe {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.layout.input_dim() {
            return Err(Error::Data(format!(
                "probe has {} weights for a {}-dimensional input",
                self.weights.len(),
                self.layout.input_dim()
            )));
        }
        if !self
            .weights
            .iter()
            .chain([&self.bias])
            .all(|w| w.is_finite())
        {
            return Err(Error::Data("probe has non-finite weights".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

fn check_design(hidden: &[Vec<f64>], n_targets: usize, layout: &ProbeLayout) -> Result<()> {
    if hidden.is_empty() {
        return Err(Error::Input("no training examples".into()));
    }
    if hidden.len() != n_targets {
        return Err(Error::Input(format!(
            "{} rows but {n_targets} targets",
            hidden.len()
        )));
    }
    if let Some(r) = hidden.iter().find(|r| r.len() != layout.input_dim()) {
        return Err(Error::Input(format!(
            "row of width {} for a {}-dimensional probe",
            r.len(),
            layout.input_dim()
        )));
    }
    Ok(())
}

/// Ridge regression probe.
pub fn train_regressor(
    hidden: &[Vec<f64>],
    targets: &[f64],
    lambda: f64,
    layout: ProbeLayout,
) -> Result<Probe> {
    check_design(hidden, targets.len(), &layout)?;
    let (weights, bias) = ridge_fit(hidden, targets, lambda)?;
    Ok(Probe {
        schema_version: PROBE_SCHEMA.into(),
        kind: ProbeKind::Regressor,
        layout,
        lambda,
        weights,
        bias,
    })
}

/// Logistic probe on binarised targets, ridge-penalised by `lambda`.
pub fn train_classifier(
    hidden: &[Vec<f64>],
    labels: &[bool],
    lambda: f64,
    layout: ProbeLayout,
) -> Result<Probe> {
    check_design(hidden, labels.len(), &layout)?;
    let fit = fit_irls(
        hidden,
        labels,
        &IrlsOptions {
            ridge: lambda,
            ..IrlsOptions::default()
        },
    )?;
    Ok(Probe {
        schema_version: PROBE_SCHEMA.into(),
        kind: ProbeKind::Classifier,
        layout,
        lambda,
        weights: fit.weights,
        bias: fit.bias,
    })
}

/// Regressors return the affine value clamped to [0, 1]; classifiers return a
/// probability.
pub fn predict(probe: &Probe, hidden: &[f64]) -> Result<f64> {
    if hidden.len() != probe.weights.len() {
        return Err(Error::Input(format!(
            "input of width {} for a probe of width {}",
            hidden.len(),
            probe.weights.len()
        )));
    }
    let z = probe.bias
        + probe
            .weights
            .iter()
            .zip(hidden)
            .map(|(w, x)| w * x)
            .sum::<f64>();
    Ok(match probe.kind {
        ProbeKind::Regressor => z.clamp(0.0, 1.0),
        ProbeKind::Classifier => sigmoid(z),
    })
}

pub fn predict_activations(probe: &Probe, activations: &Activations) -> Result<f64> {
    predict(
        probe,
        &hidden_features(activations, &probe.layout.window, probe.layout.d_model)?,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub schema_version: String,
    /// Names of the input features, e.g. `["su", "vu"]`.
    pub features: Vec<String>,
    /// Whether the inputs were calculated scores or probe predictions.
    pub feature_source: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Records with probability ≥ threshold are flagged as hallucinated.
    pub threshold: f64,
}

impl Detector {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.features.len() {
            return Err(Error::Data(
                "detector weights do not match its feature names".into(),
            ));
        }
        if !self
            .weights
            .iter()
            .chain([&self.bias, &self.threshold])
            .all(|w| w.is_finite())
        {
            return Err(Error::Data("detector has non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::Input(format!(
                "{} features for a detector over {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(sigmoid(
            self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
        ))
    }

    pub fn flags(&self, x: &[f64]) -> Result<bool> {
        Ok(self.probability(x)? >= self.threshold)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(text)?;
        d.validate()?;
        Ok(d)
    }
}

/// Threshold maximising training accuracy of `p ≥ t`; ties go to the lowest
/// candidate. Candidates are midpoints between distinct scores plus one
/// value below and one above all of them.
pub fn accuracy_threshold(scores: &[f64], labels: &[bool]) -> f64 {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = Vec::with_capacity(sorted.len() + 1);
    candidates.push(sorted[0] - 1.0);
    candidates.extend(sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(sorted[sorted.len() - 1] + 1.0);
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for t in candidates {
        let preds: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
        let acc = accuracy(&preds, labels);
        if acc > best.0 {
            best = (acc, t);
        }
    }
    best.1
}

/// Logistic detector over arbitrary uncertainty features.
pub fn train_detector(
    features: &[Vec<f64>],
    labels: &[bool],
    names: &[&str],
    feature_source: &str,
) -> Result<Detector> {
    if features.iter().any(|f| f.len() != names.len()) {
        return Err(Error::Input(
            "feature rows do not match the feature names".into(),
        ));
    }
    let fit = fit_irls(features, labels, &IrlsOptions::default())?;
    let probs: Vec<f64> = features.iter().map(|x| fit.probability(x)).collect();
    let threshold = accuracy_threshold(&probs, labels);
    let d = Detector {
        schema_version: DETECTOR_SCHEMA.into(),
        features: names.iter().map(|s| s.to_string()).collect(),
        feature_source: feature_source.into(),
        weights: fit.weights,
        bias: fit.bias,
        threshold,
    };
    d.validate()?;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub question_id: String,
    pub features: Vec<f64>,
    pub hallucinated: bool,
    pub abstained: bool,
}

/// Hallucinated iff the most-likely answer complies and is incorrect.
/// Abstentions are never hallucinations.
pub fn label_examples(
    sets: &[AnswerSet],
    golds: &[Vec<String>],
    features: &[Vec<f64>],
    oracle: &dyn CorrectnessOracle,
) -> Result<Vec<LabeledExample>> {
    if sets.len() != golds.len() || sets.len() != features.len() {
        return Err(Error::Input(
            "answer sets, golds and features differ in length".into(),
        ));
    }
    sets.iter()
        .zip(golds)
        .zip(features)
        .map(|((set, gold), f)| {
            let abstained = set.most_likely.abstained.ok_or_else(|| {
                Error::Input(format!("{}: abstention not scored", set.question_id))
            })?;
            let hallucinated = !abstained && !oracle.correct(&set.most_likely.text, gold)?;
            Ok(LabeledExample {
                question_id: set.question_id.clone(),
                features: f.clone(),
                hallucinated,
                abstained,
            })
        })
        .collect()
}
