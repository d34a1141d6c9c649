//! Independent oracles and random-instance builders shared by the
//! integration tests and the acceptance suite.

#![allow(dead_code)]

use asmlc::adam::Params;
use asmlc::data::LabelMatrix;
use asmlc::head::{ClassWeights, SubspaceHead};
use asmlc::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub mod checks;
pub mod gradcheck;
pub mod scenarios;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor of [`rel_err`]: entries smaller than this are compared
/// absolutely against `FD_REL_TOL * REL_FLOOR`.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normals(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * normal(rng)).collect()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest [`rel_err`] over matching blocks.
pub fn max_rel_err(analytic: &[&[f64]], numeric: &[Vec<f64>]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "block count");
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| {
            assert_eq!(a.len(), n.len(), "block length");
            a.iter().zip(n).map(|(&a, &n)| rel_err(a, n))
        })
        .fold(0.0, f64::max)
}

/// Central differences of `f` with respect to every parameter entry.
pub fn fd_params<P: Params + Clone>(p: &P, f: impl Fn(&P) -> f64) -> Vec<Vec<f64>> {
    let lens: Vec<usize> = p.blocks().iter().map(|b| b.len()).collect();
    lens.iter()
        .enumerate()
        .map(|(b, &len)| {
            (0..len)
                .map(|j| {
                    let mut plus = p.clone();
                    plus.blocks_mut()[b][j] += FD_STEP;
                    let mut minus = p.clone();
                    minus.blocks_mut()[b][j] -= FD_STEP;
                    (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
                })
                .collect()
        })
        .collect()
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn fd_vec(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut plus = x.to_vec();
            plus[j] += FD_STEP;
            let mut minus = x.to_vec();
            minus[j] -= FD_STEP;
            (f(&plus) - f(&minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Head with `N(0, 1/d)` normals and `N(0, 1)` biases.
pub fn random_head(rng: &mut ChaCha8Rng, n: usize, d: usize, e: usize) -> SubspaceHead {
    let w = (0..n)
        .map(|_| Matrix::from_vec(e, d, normals(rng, e * d, 1.0 / (d as f64).sqrt())).unwrap())
        .collect();
    let b0 = (0..n).map(|_| normals(rng, e, 1.0)).collect();
    let b1 = (0..n).map(|_| normals(rng, e, 1.0)).collect();
    SubspaceHead::from_parts(w, b0, b1).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, rows: usize, n: usize) -> LabelMatrix {
    let rows: Vec<Vec<u8>> = (0..rows).map(|_| (0..n).map(|_| rng.random_range(0..=1u8)).collect()).collect();
    LabelMatrix::from_rows(&rows).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> ClassWeights {
    ClassWeights::new((0..n).map(|_| [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)]).collect()).unwrap()
}

/// Gaussian KDE likelihood summed term by term as a product of 1-D densities.
pub fn kde_oracle(points: &[Vec<f64>], u: &[f64], delta: f64) -> f64 {
    let mut sum = 0.0;
    for p in points {
        let mut k = 1.0;
        for (a, b) in u.iter().zip(p) {
            k *= (-(a - b) * (a - b) / (2.0 * delta * delta)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * delta);
        }
        sum += k;
    }
    sum / points.len() as f64
}

/// Average precision from its definition: the mean, over positives, of the
/// precision among all samples ranked at or above it. Ranking is by score
/// descending, ties by lower index first.
pub fn ap_oracle(scores: &[f64], truth: &[u8]) -> Option<f64> {
    let ahead = |j: usize, k: usize| scores[j] > scores[k] || (scores[j] == scores[k] && j <= k);
    let positives: Vec<usize> = (0..scores.len()).filter(|&k| truth[k] == 1).collect();
    if positives.is_empty() {
        return None;
    }
    let total: f64 = positives
        .iter()
        .map(|&k| {
            let rank = (0..scores.len()).filter(|&j| ahead(j, k)).count();
            let hits = positives.iter().filter(|&&j| ahead(j, k)).count();
            hits as f64 / rank as f64
        })
        .sum();
    Some(total / positives.len() as f64)
}

/// AUC as the fraction of (positive, negative) pairs ordered correctly, ties
/// counting one half.
pub fn auc_oracle(scores: &[f64], truth: &[u8]) -> Option<f64> {
    let pos: Vec<f64> = (0..scores.len()).filter(|&k| truth[k] == 1).map(|k| scores[k]).collect();
    let neg: Vec<f64> = (0..scores.len()).filter(|&k| truth[k] == 0).map(|k| scores[k]).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

pub fn opt_close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => (a - b).abs() <= tol,
        _ => false,
    }
}
