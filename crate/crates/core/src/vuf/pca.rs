use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ContrastiveSets;
use crate::error::{Error, Result};
use crate::probes::logistic::{fit_irls, IrlsOptions};

pub const POWER_MAX_ITERS: usize = 200;
pub const POWER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub uncertain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub layer: usize,
    pub points: Vec<ProjectedPoint>,
    /// Fraction of total variance explained by each component; first ≥ second.
    pub explained_variance: [f64; 2],
    /// Training accuracy of a logistic boundary fit on the 2-D points.
    pub separability: f64,
}

#[derive(Debug, Clone)]
pub struct PrincipalComponents {
    pub components: Vec<DVector<f64>>,
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
}

/// Top `k` eigenpairs of a symmetric PSD matrix by power iteration with
/// deflation. The start vector comes from a fixed-seed rng.
pub fn power_components(cov: &DMatrix<f64>, k: usize) -> PrincipalComponents {
    let d = cov.nrows();
    let total_variance = cov.trace();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut work = cov.clone();
    let mut components: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for _ in 0..k.min(d) {
        let mut v = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let orthogonalize = |v: &mut DVector<f64>, comps: &[DVector<f64>]| {
            for c in comps {
                let p = c.dot(v);
                v.axpy(-p, c, 1.0);
            }
        };
        orthogonalize(&mut v, &components);
        v.normalize_mut();
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let mut w = &work * &v;
            orthogonalize(&mut w, &components);
            let n = w.norm();
            if n <= f64::EPSILON * total_variance.max(1e-300) {
                // deflated matrix is numerically zero on this subspace
                lambda = 0.0;
                break;
            }
            w /= n;
            if w.dot(&v) < 0.0 {
                w = -w;
            }
            let delta = (&w - &v).norm();
            v = w;
            lambda = v.dot(&(&work * &v));
            if delta < POWER_TOL {
                break;
            }
        }
        work -= lambda * &v * v.transpose();
        components.push(v);
        eigenvalues.push(lambda.max(0.0));
    }
    PrincipalComponents {
        components,
        eigenvalues,
        total_variance,
    }
}

/// Projects pooled certain/uncertain activations at `layer` onto their top
/// two principal components and measures linear separability there.
pub fn pca_separability(sets: &ContrastiveSets, layer: usize) -> Result<Projection2D> {
    sets.validate()?;
    if sets.uncertain.len() < 3 || sets.certain.len() < 3 {
        return Err(Error::Input("PCA needs at least 3 points per class".into()));
    }
    let rows: Vec<(&Vec<f32>, bool)> = sets
        .uncertain
        .iter()
        .map(|a| (a, true))
        .chain(sets.certain.iter().map(|a| (a, false)))
        .map(|(a, lab)| {
            a.get(&layer)
                .map(|v| (v, lab))
                .ok_or_else(|| Error::Input(format!("layer {layer} not captured")))
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let d = rows[0].0.len();
    let mut x = DMatrix::<f64>::from_fn(n, d, |i, j| rows[i].0[j] as f64);
    let mean = x.row_mean();
    for mut r in x.row_iter_mut() {
        r -= &mean;
    }
    let cov = x.transpose() * &x / n as f64;
    let pcs = power_components(&cov, 2);
    if !(pcs.total_variance > 0.0) {
        return Err(Error::DegenerateData(
            "activations have zero variance".into(),
        ));
    }
    let explained = [
        (pcs.eigenvalues[0] / pcs.total_variance).clamp(0.0, 1.0),
        (pcs.eigenvalues.get(1).copied().unwrap_or(0.0) / pcs.total_variance).clamp(0.0, 1.0),
    ];
    let coords = &x * DMatrix::from_columns(&pcs.components);
    let points: Vec<ProjectedPoint> = (0..n)
        .map(|i| ProjectedPoint {
            x: coords[(i, 0)],
            y: if coords.ncols() > 1 {
                coords[(i, 1)]
            } else {
                0.0
            },
            uncertain: rows[i].1,
        })
        .collect();

    // standardise so the ridge term is scale-free
    let scale = |k: usize| {
        let s = (pcs.eigenvalues.get(k).copied().unwrap_or(0.0)).sqrt();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let (sx, sy) = (scale(0), scale(1));
    let features: Vec<Vec<f64>> = points.iter().map(|p| vec![p.x / sx, p.y / sy]).collect();
    let labels: Vec<bool> = points.iter().map(|p| p.uncertain).collect();
    let fit = fit_irls(&features, &labels, &IrlsOptions::default())?;
    let correct = features
        .iter()
        .zip(&labels)
        .filter(|(f, &y)| (fit.probability(f) >= 0.5) == y)
        .count();
    Ok(Projection2D {
        layer,
        points,
        explained_variance: explained,
        separability: correct as f64 / n as f64,
    })
}
