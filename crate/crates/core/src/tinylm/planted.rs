//! Analytic constructor for a toy model with a known hedging direction.
//!
//! The residual stream is laid out in orthonormal directions, all orthogonal
//! to the all-ones vector so LayerNorm centering leaves them alone:
//!
//! * `v*`, the planted direction, recorded in [`PlantedDirection`];
//! * a constant direction present in every embedding (attention queries);
//! * three grammar-state directions: *question* (bytes, BOS, mode tokens),
//!   *prefix* (hedge phrases) and *done* (answers, abstention, EOS);
//! * a mode marker carried by the two mode tokens;
//! * a `d_head`-dimensional content subspace holding per-letter clues.
//!
//! The two mode tokens embed as `±c·v*`. Head 1 of the injection layer
//! attends from every position to a mode token, if one is visible, and copies
//! its `v*` coordinate forward. Head 0 of layer 0 averages the clue content of
//! the prompt so the answer logits depend on the question. The unembedding
//! raises hedge-token logits along `v*` and entity logits along the clue axes;
//! a hedge token lowers the logits of further hedges.
//! Every other weight is small seeded noise, so blocks are near-identity and
//! the `v*` component survives to the last layer.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use super::vocab::{SpecialKind, TokenId, BYTE_TOKENS, EOS, STANDARD_VOCAB};
use super::weights::{ModelWeights, PlantedDirection};
use super::ModelConfig;
use crate::error::{Error, Result};

/// Gains of the planted circuit. Defaults are tuned for `d_model = 64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    /// Standard deviation of the noise added to every weight.
    pub noise_std: f32,
    /// Coefficient of `v*` in the mode-token embeddings.
    pub mode_strength: f32,
    /// Size of the `v*` write performed by the mode-reader head.
    pub mode_output: f32,
    /// Attention logit advantage of a mode token over other positions.
    pub attention_margin: f32,
    pub summary_gain: f32,
    /// Spread of entity logits along the clue axes.
    pub knowledge_gain: f32,
    /// How far each letter's clue deviates from its entity axis.
    pub clue_noise: f32,
    /// Weight of the grammar-state directions in the unembedding.
    pub state_gain: f32,
    /// Penalty on hedge and abstain logits once a hedge has been emitted.
    pub repeat_penalty: f32,
    pub hedge_gain: f32,
    pub hedge_bias: f32,
    pub abstain_gain: f32,
    pub abstain_bias: f32,
}

impl Default for PlantedParams {
    fn default() -> Self {
        Self {
            noise_std: 0.01,
            mode_strength: 1.0,
            mode_output: 1.5,
            attention_margin: 12.0,
            summary_gain: 1.5,
            knowledge_gain: 2.0,
            clue_noise: 0.35,
            state_gain: 3.0,
            repeat_penalty: 5.0,
            hedge_gain: 3.0,
            hedge_bias: -1.5,
            abstain_gain: 4.0,
            abstain_bias: -9.0,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Question,
    Mode(f32),
    Hedge,
    Abstain,
    Entity(usize),
    Eos,
    Inert,
}

struct Basis {
    planted: Vec<f64>,
    constant: Vec<f64>,
    question: Vec<f64>,
    prefix: Vec<f64>,
    done: Vec<f64>,
    mode: Vec<f64>,
    content: Vec<Vec<f64>>,
}

fn gram_schmidt(d: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let ones: Vec<f64> = vec![1.0 / (d as f64).sqrt(); d];
    let mut basis: Vec<Vec<f64>> = vec![ones];
    while basis.len() < count + 1 {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis.remove(0);
    basis
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn add_scaled(dst: &mut [f32], src: &[f64], s: f32) {
    dst.iter_mut()
        .zip(src)
        .for_each(|(d, &x)| *d += s * x as f32);
}

/// Builds the planted model with default gains.
pub fn build_planted_model(
    config: &ModelConfig,
    hedge_tokens: &BTreeSet<TokenId>,
    injection_layer: usize,
) -> Result<ModelWeights> {
    build_planted_model_with(
        config,
        hedge_tokens,
        injection_layer,
        &PlantedParams::default(),
    )
}

pub fn build_planted_model_with(
    config: &ModelConfig,
    hedge_tokens: &BTreeSet<TokenId>,
    injection_layer: usize,
    params: &PlantedParams,
) -> Result<ModelWeights> {
    config.validate()?;
    let d = config.d_model;
    let dh = config.d_head();
    let ff = config.d_ff();
    if injection_layer >= config.n_layers {
        return Err(Error::Config(format!(
            "injection layer {injection_layer} must be below n_layers {}",
            config.n_layers
        )));
    }
    if config.vocab_size < STANDARD_VOCAB {
        return Err(Error::Config(format!(
            "planted model needs the standard vocabulary of {STANDARD_VOCAB} tokens, got {}",
            config.vocab_size
        )));
    }
    if config.n_heads < 2 || dh < 2 {
        return Err(Error::Config(
            "planted model needs at least two heads of width two".into(),
        ));
    }
    if d < dh + 7 {
        return Err(Error::Config(format!(
            "d_model {d} too small for a {dh}-wide content subspace plus 6 structural directions"
        )));
    }
    if let Some(&t) = hedge_tokens
        .iter()
        .find(|&&t| t as usize >= config.vocab_size)
    {
        return Err(Error::Config(format!("hedge token {t} outside vocabulary")));
    }
    if hedge_tokens.is_empty() {
        return Err(Error::Config("hedge token set is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dirs = gram_schmidt(d, 6 + dh, &mut rng).into_iter();
    let mut next = || dirs.next().expect("enough directions");
    let basis = Basis {
        planted: next(),
        constant: next(),
        question: next(),
        prefix: next(),
        done: next(),
        mode: next(),
        content: (0..dh).map(|_| next()).collect(),
    };

    let vocab = config.vocab();
    let entities = vocab.entity_ids();
    let knowledge: Vec<Vec<f64>> = (0..entities.len())
        .map(|j| {
            if entities.len() <= dh {
                basis.content[j].clone()
            } else {
                let coeffs: Vec<f64> = (0..dh).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
                let mut v = vec![0.0; d];
                for (c, b) in coeffs.iter().zip(&basis.content) {
                    v.iter_mut().zip(b).for_each(|(x, y)| *x += c / n * y);
                }
                v
            }
        })
        .collect();

    // Each alphanumeric byte is a clue pointing mostly at one entity.
    let mut letter_entity: Vec<usize> = (0..36).map(|i| i % entities.len().max(1)).collect();
    letter_entity.shuffle(&mut rng);
    let clue = |byte: u8, rng: &mut ChaCha8Rng| -> Option<Vec<f64>> {
        let idx = match byte.to_ascii_lowercase() {
            b @ b'a'..=b'z' => (b - b'a') as usize,
            b @ b'0'..=b'9' => 26 + (b - b'0') as usize,
            _ => return None,
        };
        let mut v = knowledge.get(letter_entity[idx])?.clone();
        for b in &basis.content {
            let g: f64 = StandardNormal.sample(rng);
            let s = params.clue_noise as f64 * g / (dh as f64).sqrt();
            v.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        Some(v)
    };

    let role = |id: usize| -> Role {
        let tid = id as TokenId;
        if id < BYTE_TOKENS {
            return Role::Question;
        }
        match vocab.kind(tid) {
            _ if hedge_tokens.contains(&tid) => {
                if vocab.kind(tid) == Some(SpecialKind::Abstain) {
                    Role::Abstain
                } else {
                    Role::Hedge
                }
            }
            Some(SpecialKind::Bos) => Role::Question,
            Some(SpecialKind::ModeCertain) => Role::Mode(-1.0),
            Some(SpecialKind::ModeUncertain) => Role::Mode(1.0),
            Some(SpecialKind::Eos) => Role::Eos,
            Some(SpecialKind::Entity) => {
                Role::Entity(entities.iter().position(|&e| e == tid).expect("entity"))
            }
            Some(SpecialKind::Abstain) => Role::Eos,
            Some(SpecialKind::Hedge) => Role::Inert,
            None => Role::Inert,
        }
    };
    let roles: Vec<Role> = (0..config.vocab_size).map(role).collect();

    let noise = Normal::new(0.0f32, params.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let noisy =
        |r: usize, c: usize, rng: &mut ChaCha8Rng| Matrix::from_fn(r, c, |_, _| noise.sample(rng));

    // Embeddings.
    let mut tok_emb = noisy(config.vocab_size, d, &mut rng);
    for (id, &r) in roles.iter().enumerate() {
        let row = tok_emb.row_mut(id);
        add_scaled(row, &basis.constant, 1.0);
        match r {
            Role::Question | Role::Inert => {
                add_scaled(row, &basis.question, 1.0);
                if id < BYTE_TOKENS {
                    if let Some(c) = clue(id as u8, &mut rng) {
                        add_scaled(row, &c, 1.0);
                    }
                }
            }
            Role::Mode(sign) => {
                add_scaled(row, &basis.question, 1.0);
                add_scaled(row, &basis.mode, 1.0);
                add_scaled(row, &basis.planted, sign * params.mode_strength);
            }
            Role::Hedge => add_scaled(row, &basis.prefix, 1.0),
            Role::Abstain | Role::Entity(_) | Role::Eos => add_scaled(row, &basis.done, 1.0),
        }
    }
    let pos_emb = noisy(config.context_len, d, &mut rng);

    // Blocks: noise everywhere, then the two designed heads.
    let sqrt_d = (d as f32).sqrt();
    // LayerNorm output scale for a residual of norm ~1.8 (constant, state, clue).
    let ln_scale = sqrt_d / 1.8;
    let mut layers = Vec::with_capacity(config.n_layers);
    for li in 0..config.n_layers {
        let mut layer = super::weights::LayerWeights {
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            w_q: noisy(d, d, &mut rng),
            w_k: noisy(d, d, &mut rng),
            w_v: noisy(d, d, &mut rng),
            w_o: noisy(d, d, &mut rng),
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
            w_up: noisy(d, ff, &mut rng),
            b_up: vec![0.0; ff],
            w_down: noisy(ff, d, &mut rng),
            b_down: vec![0.0; d],
        };
        if li == 0 {
            // head 0: uniform attention reading the clue subspace
            for m in [&mut layer.w_q, &mut layer.w_k] {
                for r in 0..d {
                    for c in 0..dh {
                        m.set(r, c, 0.0);
                    }
                }
            }
            for (i, b) in basis.content.iter().enumerate() {
                for r in 0..d {
                    layer.w_v.set(r, i, b[r] as f32);
                }
                let row = layer.w_o.row_mut(i);
                row.iter_mut().for_each(|x| *x = 0.0);
                add_scaled(row, b, params.summary_gain / ln_scale);
            }
        }
        if li == injection_layer {
            // head 1: attend to a mode token, copy its v* coordinate
            let q_col = dh;
            let v_col = dh + 1;
            let qk = (params.attention_margin * (dh as f32).sqrt()).sqrt() / ln_scale;
            for r in 0..d {
                layer.w_q.set(r, q_col, qk * basis.constant[r] as f32);
                layer.w_k.set(r, q_col, qk * basis.mode[r] as f32);
                layer.w_v.set(r, v_col, basis.planted[r] as f32);
            }
            let gain = params.mode_output / (params.mode_strength * ln_scale);
            let row = layer.w_o.row_mut(v_col);
            row.iter_mut().for_each(|x| *x = 0.0);
            add_scaled(row, &basis.planted, gain);
        }
        layers.push(layer);
    }

    // Unembedding.
    let ws = params.state_gain;
    let mut unembed = noisy(config.vocab_size, d, &mut rng);
    let mut unembed_bias = vec![0.0f32; config.vocab_size];
    for (id, &r) in roles.iter().enumerate() {
        let row = unembed.row_mut(id);
        match r {
            Role::Hedge => {
                add_scaled(row, &basis.question, ws);
                add_scaled(row, &basis.prefix, -params.repeat_penalty);
                add_scaled(row, &basis.planted, params.hedge_gain);
                unembed_bias[id] = params.hedge_bias;
            }
            Role::Abstain => {
                add_scaled(row, &basis.question, ws);
                add_scaled(row, &basis.prefix, -params.repeat_penalty);
                add_scaled(row, &basis.planted, params.abstain_gain);
                unembed_bias[id] = params.abstain_bias;
            }
            Role::Entity(j) => {
                add_scaled(row, &basis.question, ws);
                add_scaled(row, &basis.prefix, ws);
                add_scaled(row, &knowledge[j], params.knowledge_gain);
            }
            Role::Eos if id == EOS as usize => add_scaled(row, &basis.done, 2.0 * ws),
            Role::Question if id < BYTE_TOKENS => {}
            _ => unembed_bias[id] = -30.0,
        }
    }

    let mut direction = to_f32(&basis.planted);
    let n = direction.iter().map(|x| x * x).sum::<f32>().sqrt();
    direction.iter_mut().for_each(|x| *x /= n);

    let weights = ModelWeights {
        config: config.clone(),
        tok_emb,
        pos_emb,
        layers,
        lnf_gain: vec![1.0; d],
        lnf_bias: vec![0.0; d],
        unembed,
        unembed_bias,
        planted: Some(PlantedDirection {
            direction,
            injection_layer,
            hedge_tokens: hedge_tokens.iter().copied().collect(),
        }),
    };
    weights.validate()?;
    Ok(weights)
}
