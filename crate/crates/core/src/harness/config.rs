use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::sha256_hex;
use crate::judge::JudgeConfig;
use crate::tinylm::SamplingParams;
use crate::vuf::ContrastivePolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerChoice {
    Lexical,
    Judge,
}

/// Flat JSON experiment configuration. Relative paths resolve against the
/// directory of the config file when loaded from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model_path: PathBuf,
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub n_samples: usize,
    pub temperature_high: f64,
    pub temperature_low: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub max_new_tokens: usize,
    /// Steering layers; the upper half of the model when absent.
    pub steering_window: Option<Vec<usize>>,
    /// Probe layers; the steering window when absent.
    pub probe_window: Option<Vec<usize>>,
    /// `top_bottom` or `threshold`.
    pub contrastive_policy: String,
    pub contrastive_lo: f64,
    pub contrastive_hi: f64,
    /// Per-side count for `top_bottom`; a quarter of the dataset when absent.
    pub contrastive_n: Option<usize>,
    pub max_alpha: f64,
    pub gate_detector: bool,
    pub scorer: ScorerChoice,
    pub probe_ridge: f64,
    pub sweep_alphas: Vec<f64>,
    pub sweep_questions: usize,
    pub judge_base_url: String,
    pub judge_model: String,
    pub judge_timeout_secs: f64,
    pub judge_max_retries: u32,
    pub judge_max_concurrent: usize,
    pub judge_backoff_secs: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let judge = JudgeConfig::default();
        Self {
            model_path: "model.json".into(),
            dataset_path: "dataset.jsonl".into(),
            output_dir: "out".into(),
            seed: 0,
            n_samples: 10,
            temperature_high: 1.0,
            temperature_low: 0.1,
            top_p: 0.9,
            top_k: 50,
            max_new_tokens: 8,
            steering_window: None,
            probe_window: None,
            contrastive_policy: "top_bottom".into(),
            contrastive_lo: crate::vuf::DEFAULT_CERTAIN_MAX,
            contrastive_hi: crate::vuf::DEFAULT_UNCERTAIN_MIN,
            contrastive_n: None,
            max_alpha: crate::steering::DEFAULT_MAX_ALPHA,
            gate_detector: false,
            scorer: ScorerChoice::Lexical,
            probe_ridge: crate::probes::DEFAULT_RIDGE,
            sweep_alphas: vec![-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0],
            sweep_questions: 50,
            judge_base_url: judge.base_url,
            judge_model: judge.model_name,
            judge_timeout_secs: judge.timeout_secs,
            judge_max_retries: judge.max_retries,
            judge_max_concurrent: judge.max_concurrent,
            judge_backoff_secs: judge.backoff_base_secs,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative_to(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, dir: &Path) {
        for p in [
            &mut self.model_path,
            &mut self.dataset_path,
            &mut self.output_dir,
        ] {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hash of every setting that influences results. Paths are reduced to
    /// file names so the same experiment hashes alike wherever it runs.
    pub fn hash(&self) -> String {
        let name = |p: &Path| PathBuf::from(p.file_name().unwrap_or_default());
        let canonical = Self {
            model_path: name(&self.model_path),
            dataset_path: name(&self.dataset_path),
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        sha256_hex(
            serde_json::to_string(&canonical)
                .expect("config serialises")
                .as_bytes(),
        )
    }

    /// Checks settings and that input files exist.
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config(format!(
                "n_samples must be at least 2, got {}",
                self.n_samples
            )));
        }
        self.high_params(0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.low_params(0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.policy()?;
        if !(self.max_alpha >= 0.0) {
            return Err(Error::Config(format!(
                "max_alpha must be ≥ 0, got {}",
                self.max_alpha
            )));
        }
        if !(self.probe_ridge >= 0.0) {
            return Err(Error::Config("probe_ridge must be ≥ 0".into()));
        }
        if self.sweep_alphas.is_empty() {
            return Err(Error::Config("sweep_alphas is empty".into()));
        }
        for (what, p) in [("model", &self.model_path), ("dataset", &self.dataset_path)] {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "{what} file {} not found",
                    p.display()
                )));
            }
        }
        if self.scorer == ScorerChoice::Judge {
            self.judge().validate()?;
        }
        Ok(())
    }

    pub fn high_params(&self, seed: u64) -> SamplingParams {
        SamplingParams {
            temperature: self.temperature_high,
            top_p: self.top_p,
            top_k: self.top_k,
            max_new_tokens: self.max_new_tokens,
            rng_seed: seed,
        }
    }

    pub fn low_params(&self, seed: u64) -> SamplingParams {
        SamplingParams {
            temperature: self.temperature_low,
            ..self.high_params(seed)
        }
    }

    pub fn policy_for(&self, n_records: usize) -> Result<ContrastivePolicy> {
        match self.contrastive_policy.as_str() {
            "threshold" => Ok(ContrastivePolicy::Threshold {
                lo: self.contrastive_lo,
                hi: self.contrastive_hi,
            }),
            "top_bottom" => {
                let n = self.contrastive_n.unwrap_or((n_records / 4).max(1));
                Ok(ContrastivePolicy::TopBottom {
                    n_uncertain: n,
                    n_certain: n,
                })
            }
            other => Err(Error::Config(format!(
                "unknown contrastive_policy {other:?}"
            ))),
        }
    }

    fn policy(&self) -> Result<ContrastivePolicy> {
        self.policy_for(4)
    }

    /// Judge settings with environment overrides applied.
    pub fn judge(&self) -> JudgeConfig {
        JudgeConfig {
            base_url: self.judge_base_url.clone(),
            api_key: String::new(),
            model_name: self.judge_model.clone(),
            timeout_secs: self.judge_timeout_secs,
            max_retries: self.judge_max_retries,
            max_concurrent: self.judge_max_concurrent,
            temperature: 0.0,
            backoff_base_secs: self.judge_backoff_secs,
        }
        .with_env()
    }

    pub fn steering_window(&self, n_layers: usize) -> Vec<usize> {
        self.steering_window
            .clone()
            .unwrap_or_else(|| crate::steering::default_window(n_layers))
    }

    pub fn probe_window(&self, n_layers: usize) -> Vec<usize> {
        self.probe_window
            .clone()
            .unwrap_or_else(|| self.steering_window(n_layers))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_json_round_trip() {
        let c = ExperimentConfig {
            seed: 9,
            steering_window: Some(vec![1, 2]),
            ..ExperimentConfig::default()
        };
        assert_eq!(
            ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(),
            c
        );
    }

    #[test]
    fn unknown_key_is_config_error() {
        assert!(matches!(
            ExperimentConfig::from_json("{\"sed\": 1}"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hash_ignores_output_dir_and_location() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "/elsewhere".into();
        b.model_path = "/abs/model.json".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn missing_dataset_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("model.json"), "{}").unwrap();
        let mut c = ExperimentConfig::default();
        c.resolve_relative_to(dir.path());
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("dataset")));
    }
}
