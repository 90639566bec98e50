//! Verbal-uncertainty feature: contrastive selection, difference-in-means
//! extraction and the geometric analyses run on the result.

mod pca;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pca::{
    pca_separability, power_components, PrincipalComponents, ProjectedPoint, Projection2D,
};

/// Last-token residual stream of one question: `layer → vector`.
pub type Activations = BTreeMap<usize, Vec<f32>>;

/// One question's activations together with its question-level VU score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredActivations {
    pub activations: Activations,
    pub vu: f64,
}

/// Default thresholds: certain at VU ≤ 0.05, uncertain at VU ≥ 0.9.
pub const DEFAULT_CERTAIN_MAX: f64 = 0.05;
pub const DEFAULT_UNCERTAIN_MIN: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ContrastivePolicy {
    Threshold {
        lo: f64,
        hi: f64,
    },
    TopBottom {
        n_uncertain: usize,
        n_certain: usize,
    },
}

impl Default for ContrastivePolicy {
    fn default() -> Self {
        ContrastivePolicy::Threshold {
            lo: DEFAULT_CERTAIN_MAX,
            hi: DEFAULT_UNCERTAIN_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMeta {
    pub policy: ContrastivePolicy,
    pub source: String,
    /// Indices into the scored input, in selection order.
    pub uncertain_indices: Vec<usize>,
    pub certain_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveSets {
    pub uncertain: Vec<Activations>,
    pub certain: Vec<Activations>,
    pub meta: SelectionMeta,
}

impl ContrastiveSets {
    /// Builds sets directly from two activation lists, checking shapes.
    pub fn from_parts(
        uncertain: Vec<Activations>,
        certain: Vec<Activations>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let meta = SelectionMeta {
            policy: ContrastivePolicy::TopBottom {
                n_uncertain: uncertain.len(),
                n_certain: certain.len(),
            },
            source: source.into(),
            uncertain_indices: (0..uncertain.len()).collect(),
            certain_indices: (0..certain.len()).collect(),
        };
        let sets = Self {
            uncertain,
            certain,
            meta,
        };
        sets.validate()?;
        Ok(sets)
    }

    /// Both sides nonempty; every member shares the layer set and width.
    pub fn validate(&self) -> Result<()> {
        if self.uncertain.is_empty() {
            return Err(Error::EmptySelection { side: "uncertain" });
        }
        if self.certain.is_empty() {
            return Err(Error::EmptySelection { side: "certain" });
        }
        let reference = &self.uncertain[0];
        let d = reference.values().next().map(Vec::len).unwrap_or(0);
        for a in self.uncertain.iter().chain(&self.certain) {
            if a.len() != reference.len() || !a.keys().eq(reference.keys()) {
                return Err(Error::Data("activation layer sets differ".into()));
            }
            if a.values().any(|v| v.len() != d) {
                return Err(Error::Data("activation widths differ".into()));
            }
        }
        Ok(())
    }

    pub fn d_model(&self) -> usize {
        self.uncertain[0].values().next().map(Vec::len).unwrap_or(0)
    }
}

fn stable_order(scored: &[ScoredActivations], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scored.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = scored[a].vu.total_cmp(&scored[b].vu);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    idx
}

/// Splits scored questions into verbally uncertain and certain sets.
pub fn build_contrastive_sets(
    scored: &[ScoredActivations],
    policy: &ContrastivePolicy,
    source: &str,
) -> Result<ContrastiveSets> {
    if scored.is_empty() {
        return Err(Error::Input("no scored activations".into()));
    }
    let (unc, cert): (Vec<usize>, Vec<usize>) = match *policy {
        ContrastivePolicy::Threshold { lo, hi } => {
            if !(lo < hi) {
                return Err(Error::Input(format!(
                    "threshold lo {lo} must be below hi {hi}"
                )));
            }
            (
                (0..scored.len()).filter(|&i| scored[i].vu >= hi).collect(),
                (0..scored.len()).filter(|&i| scored[i].vu <= lo).collect(),
            )
        }
        ContrastivePolicy::TopBottom {
            n_uncertain,
            n_certain,
        } => {
            let mut top = stable_order(scored, true);
            top.truncate(n_uncertain);
            let mut bottom = stable_order(scored, false);
            bottom.truncate(n_certain);
            (top, bottom)
        }
    };
    let sets = ContrastiveSets {
        uncertain: unc.iter().map(|&i| scored[i].activations.clone()).collect(),
        certain: cert
            .iter()
            .map(|&i| scored[i].activations.clone())
            .collect(),
        meta: SelectionMeta {
            policy: policy.clone(),
            source: source.to_string(),
            uncertain_indices: unc,
            certain_indices: cert,
        },
    };
    sets.validate()?;
    Ok(sets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionMeta {
    pub source: String,
    pub normalized: bool,
    pub window: Vec<usize>,
}

/// Per-layer direction `r^(l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDirection {
    pub d_model: usize,
    pub layers: BTreeMap<usize, Vec<f32>>,
    pub meta: DirectionMeta,
}

impl FeatureDirection {
    pub fn validate(&self) -> Result<()> {
        if let Some((l, _)) = self.layers.iter().find(|(_, v)| v.len() != self.d_model) {
            return Err(Error::Data(format!("layer {l} has wrong width")));
        }
        Ok(())
    }

    /// Copy with every layer scaled to unit norm. Zero layers stay zero.
    pub fn unit_normalized(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|(&l, v)| {
                let n = v
                    .iter()
                    .map(|&x| (x as f64) * (x as f64))
                    .sum::<f64>()
                    .sqrt();
                let scaled = if n > 0.0 {
                    v.iter().map(|&x| (x as f64 / n) as f32).collect()
                } else {
                    v.clone()
                };
                (l, scaled)
            })
            .collect();
        Self {
            d_model: self.d_model,
            layers,
            meta: DirectionMeta {
                normalized: true,
                ..self.meta.clone()
            },
        }
    }

    /// Restricts the direction to the given layers.
    pub fn restricted(&self, window: &[usize]) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for l in window {
            let v = self
                .layers
                .get(l)
                .ok_or_else(|| Error::Input(format!("layer {l} not in direction")))?;
            layers.insert(*l, v.clone());
        }
        Ok(Self {
            d_model: self.d_model,
            layers,
            meta: DirectionMeta {
                window: window.to_vec(),
                ..self.meta.clone()
            },
        })
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

fn mean_per_layer(set: &[Activations]) -> BTreeMap<usize, Vec<f64>> {
    let mut sums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for a in set {
        for (&l, v) in a {
            let s = sums.entry(l).or_insert_with(|| vec![0.0; v.len()]);
            s.iter_mut().zip(v).for_each(|(s, &x)| *s += x as f64);
        }
    }
    let n = set.len() as f64;
    for s in sums.values_mut() {
        s.iter_mut().for_each(|x| *x /= n);
    }
    sums
}

/// Difference in means `mean(uncertain) − mean(certain)` at every layer,
/// unnormalised.
pub fn extract_vuf(sets: &ContrastiveSets) -> Result<FeatureDirection> {
    sets.validate()?;
    let d = sets.d_model();
    if sets.certain[0].keys().ne(sets.uncertain[0].keys()) {
        return Err(Error::Data(
            "contrastive sides cover different layers".into(),
        ));
    }
    let mu_u = mean_per_layer(&sets.uncertain);
    let mu_c = mean_per_layer(&sets.certain);
    let layers: BTreeMap<usize, Vec<f32>> = mu_u
        .iter()
        .map(|(&l, u)| {
            let c = &mu_c[&l];
            (l, u.iter().zip(c).map(|(a, b)| (a - b) as f32).collect())
        })
        .collect();
    let window = layers.keys().copied().collect();
    Ok(FeatureDirection {
        d_model: d,
        layers,
        meta: DirectionMeta {
            source: sets.meta.source.clone(),
            normalized: false,
            window,
        },
    })
}

/// Cosine similarity of a pair of vectors; `None` when either is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    Some((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Per-layer cosine over the layers both directions share.
pub fn cosine_matrix(
    a: &FeatureDirection,
    b: &FeatureDirection,
) -> Result<BTreeMap<usize, Option<f64>>> {
    if a.d_model != b.d_model {
        return Err(Error::Input(format!(
            "d_model mismatch: {} vs {}",
            a.d_model, b.d_model
        )));
    }
    let out: BTreeMap<usize, Option<f64>> = a
        .layers
        .iter()
        .filter_map(|(l, va)| b.layers.get(l).map(|vb| (*l, cosine(va, vb))))
        .collect();
    if out.is_empty() {
        return Err(Error::Input("directions share no layers".into()));
    }
    Ok(out)
}
