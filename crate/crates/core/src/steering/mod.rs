//! Activation steering along the verbal-uncertainty feature.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probes::Detector;
use crate::tinylm::{
    generate, GenerationSample, InterventionSpec, ModelWeights, Positions, SamplingParams,
};
use crate::uncertainty::{derive_seeds, question_vu, AnswerSet, UncertaintyScores, VuScorer};
use crate::vuf::FeatureDirection;

pub const DEFAULT_MAX_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SteeringMode {
    Constant { alpha: f64 },
    Adaptive { max_alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringConfig {
    pub direction: FeatureDirection,
    pub window: Vec<usize>,
    pub mode: SteeringMode,
    #[serde(default)]
    pub positions: Positions,
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window.is_empty() {
            return Err(Error::Config("steering window is empty".into()));
        }
        if let Some(l) = self
            .window
            .iter()
            .find(|l| !self.direction.layers.contains_key(l))
        {
            return Err(Error::Config(format!(
                "steering layer {l} has no direction"
            )));
        }
        match self.mode {
            SteeringMode::Adaptive { max_alpha } if !(max_alpha >= 0.0) => Err(Error::Config(
                format!("max_alpha must be ≥ 0, got {max_alpha}"),
            )),
            SteeringMode::Constant { alpha } if !alpha.is_finite() => {
                Err(Error::Config(format!("alpha must be finite, got {alpha}")))
            }
            _ => Ok(()),
        }
    }
}

/// Upper half of the layer stack.
pub fn default_window(n_layers: usize) -> Vec<usize> {
    (n_layers / 2..n_layers).collect()
}

/// `clip(su_norm − vu, 0, max_alpha)`.
pub fn adaptive_alpha(su_norm: f64, vu: f64, max_alpha: f64) -> f64 {
    (su_norm - vu).max(0.0).min(max_alpha.max(0.0))
}

/// One `h ← h + α·r^(l)` intervention per window layer.
pub fn make_interventions(config: &SteeringConfig, alpha: f64) -> Result<Vec<InterventionSpec>> {
    config.validate()?;
    Ok(config
        .window
        .iter()
        .map(|&l| InterventionSpec {
            layers: vec![l],
            direction: config.direction.layers[&l].clone(),
            alpha: alpha as f32,
            positions: config.positions,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub alphas: Vec<f64>,
    pub mean_vu: Vec<f64>,
    pub n: Vec<usize>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,mean_vu,n\n");
        for ((a, v), n) in self.alphas.iter().zip(&self.mean_vu).zip(&self.n) {
            out.push_str(&format!("{a},{v},{n}\n"));
        }
        out
    }
}

/// A question to sweep over: id, text and the base seed of its samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepQuestion {
    pub id: String,
    pub question: String,
    pub seed: u64,
}

/// Mean question VU of freshly sampled answers under each constant α. Every α
/// reuses the same per-question seeds.
pub fn sweep_alpha(
    weights: &ModelWeights,
    questions: &[SweepQuestion],
    config: &SteeringConfig,
    alpha_grid: &[f64],
    scorer: &dyn VuScorer,
    n_samples: usize,
    params: &SamplingParams,
) -> Result<SweepResult> {
    if alpha_grid.is_empty() {
        return Err(Error::Input("empty alpha grid".into()));
    }
    if questions.is_empty() || n_samples == 0 {
        return Err(Error::Input("sweep needs questions and samples".into()));
    }
    config.validate()?;
    let vocab = weights.config.vocab();
    let mut result = SweepResult {
        alphas: alpha_grid.to_vec(),
        mean_vu: Vec::new(),
        n: Vec::new(),
    };
    for &alpha in alpha_grid {
        let specs = if alpha == 0.0 {
            Vec::new()
        } else {
            make_interventions(config, alpha)?
        };
        let mut per_question = Vec::with_capacity(questions.len());
        let mut count = 0;
        for q in questions {
            let prompt = vocab.encode_prompt(&q.question);
            let mut items = Vec::with_capacity(n_samples);
            for s in derive_seeds(q.seed, n_samples) {
                let g = generate(
                    weights,
                    &prompt,
                    &params.with_seed(s),
                    &specs,
                    &BTreeSet::new(),
                )
                .map_err(|e| alpha_context(e, alpha))?;
                items.push((q.question.clone(), g.text));
            }
            let vus = scorer
                .score_batch(&items)
                .map_err(|e| alpha_context(e, alpha))?;
            count += vus.len();
            per_question.push(question_vu(&vus)?);
        }
        result.mean_vu.push(question_vu(&per_question)?);
        result.n.push(count);
    }
    Ok(result)
}

fn alpha_context(e: Error, alpha: f64) -> Error {
    match e {
        Error::Input(m) => Error::Input(format!("at alpha {alpha}: {m}")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MucOutcome {
    pub sample: GenerationSample,
    pub alpha: f64,
}

/// Optional detector gate: records it does not flag are left unsteered.
pub struct Gate<'a> {
    pub detector: &'a Detector,
    pub features: &'a [f64],
}

/// Regenerates the most-likely answer steered by the adaptive α.
pub fn muc_pipeline(
    weights: &ModelWeights,
    set: &AnswerSet,
    config: &SteeringConfig,
    scores: &UncertaintyScores,
    max_alpha: f64,
    gate: Option<Gate<'_>>,
    low: &SamplingParams,
) -> Result<MucOutcome> {
    let mut alpha = adaptive_alpha(scores.su_norm, scores.vu_most_likely, max_alpha);
    if let Some(g) = gate {
        if !g.detector.flags(g.features)? {
            alpha = 0.0;
        }
    }
    let specs = if alpha == 0.0 {
        Vec::new()
    } else {
        make_interventions(config, alpha)?
    };
    let prompt = weights.config.vocab().encode_prompt(&set.question);
    let sample = generate(
        weights,
        &prompt,
        &low.with_seed(set.most_likely.seed),
        &specs,
        &BTreeSet::new(),
    )?;
    Ok(MucOutcome { sample, alpha })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_worked_examples() {
        assert!((adaptive_alpha(0.8, 0.3, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(adaptive_alpha(0.2, 0.6, 1.0), 0.0);
        assert_eq!(adaptive_alpha(1.0, 0.0, 0.4), 0.4);
        assert_eq!(adaptive_alpha(1.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn default_window_is_upper_half() {
        assert_eq!(default_window(6), vec![3, 4, 5]);
        assert_eq!(default_window(32), (16..32).collect::<Vec<_>>());
    }

    #[test]
    fn csv_has_header() {
        let r = SweepResult {
            alphas: vec![0.0, 1.0],
            mean_vu: vec![0.25, 0.5],
            n: vec![4, 4],
        };
        assert_eq!(r.to_csv(), "alpha,mean_vu,n\n0,0.25,4\n1,0.5,4\n");
    }
}
