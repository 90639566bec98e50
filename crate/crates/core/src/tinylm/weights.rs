use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{norm, Matrix};
use super::vocab::TokenId;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::fsutil;

pub const WEIGHTS_FORMAT: &str = "vucal-tinylm";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub ln1_gain: Vec<f32>,
    pub ln1_bias: Vec<f32>,
    /// Projections act on row vectors: `q = x · w_q`.
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub ln2_gain: Vec<f32>,
    pub ln2_bias: Vec<f32>,
    pub w_up: Matrix,
    pub b_up: Vec<f32>,
    pub w_down: Matrix,
    pub b_down: Vec<f32>,
}

/// Ground truth recorded by the planted constructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDirection {
    /// Unit vector of length `d_model`.
    pub direction: Vec<f32>,
    pub injection_layer: usize,
    pub hedge_tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// `vocab_size × d_model`
    pub tok_emb: Matrix,
    /// `context_len × d_model`
    pub pos_emb: Matrix,
    pub layers: Vec<LayerWeights>,
    pub lnf_gain: Vec<f32>,
    pub lnf_bias: Vec<f32>,
    /// `vocab_size × d_model`; logits are `unembed · x + unembed_bias`.
    pub unembed: Matrix,
    pub unembed_bias: Vec<f32>,
    pub planted: Option<PlantedDirection>,
}

#[derive(Serialize, Deserialize)]
struct WeightsFile {
    format: String,
    version: u32,
    weights: ModelWeights,
}

impl LayerWeights {
    fn sampled(d: usize, ff: usize, std: f32, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0f32, std).expect("valid std");
        let mut m = |r, c| Matrix::from_fn(r, c, |_, _| normal.sample(rng));
        let w_q = m(d, d);
        let w_k = m(d, d);
        let w_v = m(d, d);
        let w_o = m(d, d);
        let w_up = m(d, ff);
        let w_down = m(ff, d);
        Self {
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            w_q,
            w_k,
            w_v,
            w_o,
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
            w_up,
            b_up: vec![0.0; ff],
            w_down,
            b_down: vec![0.0; d],
        }
    }
}

impl ModelWeights {
    /// Seeded Gaussian initialisation with standard deviation `std` for every
    /// matrix; norms start at identity.
    pub fn random(config: &ModelConfig, std: f32) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let ff = config.d_ff();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0f32, std).map_err(|e| Error::Config(e.to_string()))?;
        let tok_emb = Matrix::from_fn(config.vocab_size, d, |_, _| normal.sample(&mut rng));
        let pos_emb = Matrix::from_fn(config.context_len, d, |_, _| normal.sample(&mut rng));
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights::sampled(d, ff, std, &mut rng))
            .collect();
        let unembed = Matrix::from_fn(config.vocab_size, d, |_, _| normal.sample(&mut rng));
        Ok(Self {
            config: config.clone(),
            tok_emb,
            pos_emb,
            layers,
            lnf_gain: vec![1.0; d],
            lnf_bias: vec![0.0; d],
            unembed,
            unembed_bias: vec![0.0; config.vocab_size],
            planted: None,
        })
    }

    /// Checks every shape against the config and the planted postcondition.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let d = c.d_model;
        let ff = c.d_ff();
        let bad = |what: &str| Err(Error::Data(format!("weight shape mismatch: {what}")));
        if self.tok_emb.shape() != (c.vocab_size, d) {
            return bad("tok_emb");
        }
        if self.pos_emb.shape() != (c.context_len, d) {
            return bad("pos_emb");
        }
        if self.unembed.shape() != (c.vocab_size, d) || self.unembed_bias.len() != c.vocab_size {
            return bad("unembed");
        }
        if self.lnf_gain.len() != d || self.lnf_bias.len() != d {
            return bad("final norm");
        }
        if self.layers.len() != c.n_layers {
            return bad("layer count");
        }
        for (i, l) in self.layers.iter().enumerate() {
            let ok = [&l.w_q, &l.w_k, &l.w_v, &l.w_o]
                .iter()
                .all(|m| m.shape() == (d, d))
                && l.w_up.shape() == (d, ff)
                && l.w_down.shape() == (ff, d)
                && l.b_up.len() == ff
                && l.b_down.len() == d
                && [&l.ln1_gain, &l.ln1_bias, &l.ln2_gain, &l.ln2_bias]
                    .iter()
                    .all(|v| v.len() == d);
            if !ok {
                return bad(&format!("layer {i}"));
            }
        }
        if let Some(p) = &self.planted {
            if p.direction.len() != d {
                return bad("planted direction");
            }
            let n = norm(&p.direction);
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::Data(format!("planted direction has norm {n}")));
            }
            if p.injection_layer >= c.n_layers {
                return Err(Error::Data("planted injection layer out of range".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = WeightsFile {
            format: WEIGHTS_FORMAT.into(),
            version: WEIGHTS_VERSION,
            weights: self.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if format != WEIGHTS_FORMAT || version != WEIGHTS_VERSION as u64 {
            return Err(Error::Versioning {
                expected: format!("{WEIGHTS_FORMAT} v{WEIGHTS_VERSION}"),
                found: format!("{format} v{version}"),
            });
        }
        let file: WeightsFile = serde_json::from_value(value)?;
        file.weights.validate()?;
        Ok(file.weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_size: 258,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            context_len: 16,
            seed: 3,
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let w = ModelWeights::random(&small(), 0.5).unwrap();
        let back = ModelWeights::from_json(&w.to_json().unwrap()).unwrap();
        let bits = |m: &ModelWeights| -> Vec<u32> {
            let mut v: Vec<u32> = m.tok_emb.data.iter().map(|x| x.to_bits()).collect();
            for l in &m.layers {
                v.extend(l.w_up.data.iter().map(|x| x.to_bits()));
            }
            v
        };
        assert_eq!(bits(&w), bits(&back));
        assert_eq!(w, back);
    }

    #[test]
    fn wrong_format_tag_is_a_versioning_error() {
        let w = ModelWeights::random(&small(), 0.5).unwrap();
        let text = w
            .to_json()
            .unwrap()
            .replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(
            ModelWeights::from_json(&text),
            Err(Error::Versioning { .. })
        ));
    }

    #[test]
    fn shape_mismatch_detected() {
        let mut w = ModelWeights::random(&small(), 0.5).unwrap();
        w.layers[1].b_up.pop();
        assert!(matches!(w.validate(), Err(Error::Data(_))));
    }
}
