use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{LayerActivations, Session};
use super::tensor::log_softmax;
use super::vocab::{TokenId, EOS};
use super::{InterventionSpec, ModelWeights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub max_new_tokens: usize,
    pub rng_seed: u64,
}

impl SamplingParams {
    /// High-temperature sampling used to estimate semantic entropy.
    pub fn high(seed: u64) -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.9,
            top_k: 50,
            max_new_tokens: 8,
            rng_seed: seed,
        }
    }

    /// Low-temperature decoding for the most-likely answer.
    pub fn low(seed: u64) -> Self {
        Self {
            temperature: 0.1,
            ..Self::high(seed)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Input(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Input(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Input("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSample {
    pub text: String,
    /// Generated ids, including the terminating EOS when one was produced.
    pub tokens: Vec<TokenId>,
    /// Log-probability of each chosen token under the model's untempered
    /// next-token distribution.
    pub logprobs: Vec<f64>,
    pub params: SamplingParams,
    /// Residual stream at the last prompt position per captured layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<BTreeMap<usize, Vec<f32>>>,
}

/// Candidate set after temperature scaling, top-k and nucleus truncation,
/// renormalised. Sorted by descending probability, ties by ascending id.
pub fn truncation_set(logits: &[f32], params: &SamplingParams) -> Vec<(TokenId, f64)> {
    let t = params.temperature;
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut probs: Vec<(TokenId, f64)> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| (i as TokenId, ((l as f64 - max) / t).exp()))
        .collect();
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    probs.truncate(params.top_k.min(probs.len()));

    let z: f64 = probs.iter().map(|p| p.1).sum();
    let mut cumulative = 0.0;
    let n = probs.len();
    let mut keep = n;
    for (i, p) in probs.iter_mut().enumerate() {
        p.1 /= z;
        cumulative += p.1;
        if cumulative >= params.top_p && keep == n {
            keep = i + 1;
        }
    }
    probs.truncate(keep);
    let z: f64 = probs.iter().map(|p| p.1).sum();
    for p in probs.iter_mut() {
        p.1 /= z;
    }
    probs
}

fn draw(set: &[(TokenId, f64)], rng: &mut ChaCha8Rng) -> TokenId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(id, p) in set {
        acc += p;
        if u < acc {
            return id;
        }
    }
    set.last().expect("nonempty truncation set").0
}

/// Autoregressive decoding. Interventions apply at every step, including the
/// prompt prefill. Stops at EOS, `max_new_tokens`, or a full context.
pub fn generate(
    weights: &ModelWeights,
    prompt: &[TokenId],
    params: &SamplingParams,
    interventions: &[InterventionSpec],
    capture: &BTreeSet<usize>,
) -> Result<GenerationSample> {
    params.validate()?;
    if prompt.is_empty() {
        return Err(Error::Input("prompt must be nonempty".into()));
    }
    if prompt.len() > weights.config.context_len {
        return Err(Error::Input(format!(
            "prompt of {} tokens exceeds context length {}",
            prompt.len(),
            weights.config.context_len
        )));
    }
    let mut session = Session::new(weights, interventions)?;
    let mut captured = LayerActivations::new();
    let last = prompt.len() - 1;
    for (i, &t) in prompt.iter().enumerate() {
        let cap = if capture.is_empty() {
            None
        } else {
            Some((capture, &mut captured))
        };
        session.step(t, i == last, cap)?;
    }
    let activations = (!capture.is_empty()).then(|| {
        captured
            .into_iter()
            .map(|(l, mut v)| (l, v.pop().expect("prompt captured")))
            .collect()
    });

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let ctx = weights.config.context_len;
    while tokens.len() < params.max_new_tokens {
        let logits = session.logits();
        let set = truncation_set(&logits, params);
        let next = draw(&set, &mut rng);
        logprobs.push(log_softmax(&logits)[next as usize]);
        tokens.push(next);
        if next == EOS || session.len() >= ctx {
            break;
        }
        session.step(next, true, None)?;
    }
    let text = weights.config.vocab().decode_answer(&tokens);
    Ok(GenerationSample {
        text,
        tokens,
        logprobs,
        params: params.clone(),
        activations,
    })
}
