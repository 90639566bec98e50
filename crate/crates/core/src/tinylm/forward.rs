use std::collections::{BTreeMap, BTreeSet};

use super::tensor::{dot, gelu, layer_norm, softmax_in_place};
use super::vocab::TokenId;
use super::{InterventionSpec, ModelWeights, Positions};
use crate::error::{Error, Result};

/// Residual stream per captured layer: `layer → [position][d_model]`.
pub type LayerActivations = BTreeMap<usize, Vec<Vec<f32>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Next-token logits at the final position.
    pub logits: Vec<f32>,
    pub captured: LayerActivations,
}

/// Incremental causal evaluation with cached keys and values.
///
/// Feeding tokens one at a time through [`Session::step`] is exactly the same
/// arithmetic as a full forward pass, so generation and `forward` agree bit
/// for bit under the `AllTokens` policy.
pub struct Session<'a> {
    weights: &'a ModelWeights,
    interventions: &'a [InterventionSpec],
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
    // scratch
    x: Vec<f32>,
    ln: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    attn: Vec<f32>,
    proj: Vec<f32>,
    hid: Vec<f32>,
    scores: Vec<f32>,
}

impl<'a> Session<'a> {
    pub fn new(weights: &'a ModelWeights, interventions: &'a [InterventionSpec]) -> Result<Self> {
        let c = &weights.config;
        for spec in interventions {
            spec.validate(c)?;
        }
        let d = c.d_model;
        Ok(Self {
            weights,
            interventions,
            keys: vec![Vec::with_capacity(c.context_len * d); c.n_layers],
            values: vec![Vec::with_capacity(c.context_len * d); c.n_layers],
            len: 0,
            x: vec![0.0; d],
            ln: vec![0.0; d],
            q: vec![0.0; d],
            k: vec![0.0; d],
            v: vec![0.0; d],
            attn: vec![0.0; d],
            proj: vec![0.0; d],
            hid: vec![0.0; c.d_ff()],
            scores: Vec::with_capacity(c.context_len),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Processes one token. `newest` marks the position targeted by
    /// `LastToken` interventions. Post-intervention residuals of the layers
    /// in `capture` are pushed into it.
    pub fn step(
        &mut self,
        token: TokenId,
        newest: bool,
        capture: Option<(&BTreeSet<usize>, &mut LayerActivations)>,
    ) -> Result<()> {
        let w = self.weights;
        let c = &w.config;
        if self.len >= c.context_len {
            return Err(Error::Input(format!(
                "sequence exceeds context length {}",
                c.context_len
            )));
        }
        if token as usize >= c.vocab_size {
            return Err(Error::Input(format!(
                "token id {token} outside vocabulary of {}",
                c.vocab_size
            )));
        }
        let d = c.d_model;
        let dh = c.d_head();
        let scale = 1.0 / (dh as f32).sqrt();
        let pos = self.len;

        for ((x, &e), &p) in self
            .x
            .iter_mut()
            .zip(w.tok_emb.row(token as usize))
            .zip(w.pos_emb.row(pos))
        {
            *x = e + p;
        }

        let mut capture = capture;
        for (li, layer) in w.layers.iter().enumerate() {
            layer_norm(&self.x, &layer.ln1_gain, &layer.ln1_bias, &mut self.ln);
            layer.w_q.vec_mul(&self.ln, &mut self.q);
            layer.w_k.vec_mul(&self.ln, &mut self.k);
            layer.w_v.vec_mul(&self.ln, &mut self.v);
            self.keys[li].extend_from_slice(&self.k);
            self.values[li].extend_from_slice(&self.v);
            let keys = &self.keys[li];
            let values = &self.values[li];
            let n = pos + 1;
            for h in 0..c.n_heads {
                let lo = h * dh;
                let hi = lo + dh;
                let qh = &self.q[lo..hi];
                self.scores.clear();
                for j in 0..n {
                    self.scores
                        .push(dot(qh, &keys[j * d + lo..j * d + hi]) * scale);
                }
                softmax_in_place(&mut self.scores);
                let out = &mut self.attn[lo..hi];
                out.iter_mut().for_each(|o| *o = 0.0);
                for (j, &a) in self.scores.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&values[j * d + lo..j * d + hi]) {
                        *o += a * vv;
                    }
                }
            }
            layer.w_o.vec_mul(&self.attn, &mut self.proj);
            for (x, p) in self.x.iter_mut().zip(&self.proj) {
                *x += p;
            }

            layer_norm(&self.x, &layer.ln2_gain, &layer.ln2_bias, &mut self.ln);
            layer.w_up.vec_mul(&self.ln, &mut self.hid);
            for (hv, b) in self.hid.iter_mut().zip(&layer.b_up) {
                *hv = gelu(*hv + b);
            }
            layer.w_down.vec_mul(&self.hid, &mut self.proj);
            for ((x, p), b) in self.x.iter_mut().zip(&self.proj).zip(&layer.b_down) {
                *x += p + b;
            }

            for spec in self.interventions {
                let applies = match spec.positions {
                    Positions::AllTokens => true,
                    Positions::LastToken => newest,
                };
                if applies && spec.layers.contains(&li) {
                    for (x, &r) in self.x.iter_mut().zip(&spec.direction) {
                        *x += spec.alpha * r;
                    }
                }
            }

            if let Some((layers, store)) = capture.as_mut() {
                if layers.contains(&li) {
                    store.entry(li).or_default().push(self.x.clone());
                }
            }
        }
        self.len += 1;
        Ok(())
    }

    /// Logits for the most recently stepped position.
    pub fn logits(&mut self) -> Vec<f32> {
        let w = self.weights;
        layer_norm(&self.x, &w.lnf_gain, &w.lnf_bias, &mut self.ln);
        let mut logits = vec![0.0; w.config.vocab_size];
        w.unembed.mul_vec(&self.ln, &mut logits);
        for (l, b) in logits.iter_mut().zip(&w.unembed_bias) {
            *l += b;
        }
        logits
    }
}

/// Full causal pass over `tokens`.
///
/// Returns next-token logits at the final position and the post-intervention
/// residual stream of each layer in `capture`, for every position.
pub fn forward(
    weights: &ModelWeights,
    tokens: &[TokenId],
    interventions: &[InterventionSpec],
    capture: &BTreeSet<usize>,
) -> Result<ForwardOutput> {
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    if tokens.len() > weights.config.context_len {
        return Err(Error::Input(format!(
            "sequence of {} tokens exceeds context length {}",
            tokens.len(),
            weights.config.context_len
        )));
    }
    if let Some(&l) = capture.iter().find(|&&l| l >= weights.config.n_layers) {
        return Err(Error::Input(format!("capture layer {l} out of range")));
    }
    let mut session = Session::new(weights, interventions)?;
    let mut captured = LayerActivations::new();
    let last = tokens.len() - 1;
    for (i, &t) in tokens.iter().enumerate() {
        session.step(t, i == last, Some((capture, &mut captured)))?;
    }
    Ok(ForwardOutput {
        logits: session.logits(),
        captured,
    })
}

/// Residual stream at the final prompt position for every layer, unsteered.
pub fn capture_last_token_activations(
    weights: &ModelWeights,
    prompt: &[TokenId],
) -> Result<BTreeMap<usize, Vec<f32>>> {
    let all: BTreeSet<usize> = (0..weights.config.n_layers).collect();
    let out = forward(weights, prompt, &[], &all)?;
    Ok(out
        .captured
        .into_iter()
        .map(|(l, mut per_pos)| (l, per_pos.pop().expect("nonempty prompt")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylm::ModelConfig;

    fn model() -> ModelWeights {
        let cfg = ModelConfig {
            vocab_size: 258,
            d_model: 16,
            n_layers: 3,
            n_heads: 4,
            context_len: 12,
            seed: 11,
        };
        ModelWeights::random(&cfg, 0.3).unwrap()
    }

    #[test]
    fn too_long_sequence_is_input_error() {
        let w = model();
        let toks = vec![65; 13];
        assert!(matches!(
            forward(&w, &toks, &[], &BTreeSet::new()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_alpha_is_bit_identical() {
        let w = model();
        let toks = [256, 72, 105, 33];
        let base = forward(&w, &toks, &[], &BTreeSet::new()).unwrap();
        let spec = InterventionSpec {
            layers: vec![0, 1, 2],
            direction: (0..16).map(|i| i as f32 - 7.5).collect(),
            alpha: 0.0,
            positions: Positions::AllTokens,
        };
        let steered = forward(&w, &toks, &[spec], &BTreeSet::new()).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&base.logits), bits(&steered.logits));
    }

    #[test]
    fn captured_values_are_post_intervention() {
        let w = model();
        let toks = [256, 72, 105];
        let layers: BTreeSet<usize> = [1].into();
        let base = forward(&w, &toks, &[], &layers).unwrap();
        let dir: Vec<f32> = (0..16).map(|i| if i == 3 { 1.0 } else { 0.0 }).collect();
        let spec = InterventionSpec {
            layers: vec![1],
            direction: dir,
            alpha: 2.5,
            positions: Positions::LastToken,
        };
        let steered = forward(&w, &toks, &[spec], &layers).unwrap();
        let (b, s) = (&base.captured[&1], &steered.captured[&1]);
        // earlier positions untouched under last-token policy
        assert_eq!(b[0], s[0]);
        assert_eq!(b[1], s[1]);
        assert!((s[2][3] - b[2][3] - 2.5).abs() < 1e-5);
    }

    #[test]
    fn last_token_capture_matches_forward() {
        let w = model();
        let toks = [256, 1, 2, 3, 4];
        let all: BTreeSet<usize> = (0..3).collect();
        let full = forward(&w, &toks, &[], &all).unwrap();
        let last = capture_last_token_activations(&w, &toks).unwrap();
        for l in 0..3 {
            assert_eq!(last[&l].len(), 16);
            assert_eq!(&last[&l], full.captured[&l].last().unwrap());
        }
    }

    #[test]
    fn deterministic_twice() {
        let w = model();
        let toks = [256, 9, 8, 7];
        let a = forward(&w, &toks, &[], &BTreeSet::new()).unwrap();
        let b = forward(&w, &toks, &[], &BTreeSet::new()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.logits.len(), 258);
    }
}
