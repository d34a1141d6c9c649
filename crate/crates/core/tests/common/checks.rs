//! Implementation-versus-oracle comparisons on random instances.

use asmlc::inference::{KdeModel, KdeNormalization};
use asmlc::linalg::Matrix;
use asmlc::metrics::{average_precision, roc_auc};
use rand::Rng;

use super::*;

pub const ORACLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default)]
pub struct KdeErrors {
    /// Relative error of every class likelihood.
    pub likelihood: f64,
    /// Absolute error of `P(yᵢ = 1)`.
    pub posterior: f64,
    /// `|P(yᵢ = 0) + P(yᵢ = 1) − 1|` with `P(yᵢ = 0)` from the oracle.
    pub normalization: f64,
}

impl KdeErrors {
    pub fn max(&self) -> f64 {
        self.likelihood.max(self.posterior).max(self.normalization)
    }

    pub fn merge(self, o: KdeErrors) -> KdeErrors {
        KdeErrors {
            likelihood: self.likelihood.max(o.likelihood),
            posterior: self.posterior.max(o.posterior),
            normalization: self.normalization.max(o.normalization),
        }
    }
}

/// Fits a KDE on at most 20 random descriptors and compares it with the
/// brute-force sum at a few query points.
pub fn kde_trial(seed: u64) -> KdeErrors {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=4);
    let d = rng.random_range(1..=6);
    let e = rng.random_range(1..=d);
    let k = rng.random_range(2..=20);
    let delta = [0.3, 1.0, 3.0][rng.random_range(0..3)];
    let head = random_head(&mut rng, n, d, e);
    let z = Matrix::from_vec(k, d, normals(&mut rng, k * d, 1.0)).unwrap();
    // Every label needs both classes: force rows 0 and 1 to differ.
    let mut y = random_labels(&mut rng, k, n);
    let rows: Vec<Vec<u8>> = (0..k)
        .map(|r| match r {
            0 => vec![0; n],
            1 => vec![1; n],
            _ => y.row(r).to_vec(),
        })
        .collect();
    y = asmlc::data::LabelMatrix::from_rows(&rows).unwrap();
    let kde = KdeModel::fit(&head, &z, &y, delta, KdeNormalization::ClassConditional).unwrap();

    let mut errs = KdeErrors::default();
    for _ in 0..5 {
        let q = normals(&mut rng, d, 1.0);
        let post = kde.posterior(&head, &q).unwrap();
        for i in 0..n {
            // Oracle projections straight from the normals, no bias.
            let w = head.normals(i);
            let proj = |v: &[f64]| -> Vec<f64> {
                (0..e).map(|r| (0..d).map(|c| w[(r, c)] * v[c]).sum()).collect()
            };
            let u = proj(&q);
            let mut lik = [0.0; 2];
            for (class, slot) in lik.iter_mut().enumerate() {
                let pts: Vec<Vec<f64>> = (0..k).filter(|&r| y.get(r, i) as usize == class).map(|r| proj(z.row(r))).collect();
                *slot = kde_oracle(&pts, &u, delta);
                let got = kde.likelihood(i, class as u8, &u).unwrap();
                errs.likelihood = errs.likelihood.max((got - *slot).abs() / slot.abs().max(f64::MIN_POSITIVE));
            }
            let (p0, p1) = (lik[0] / (lik[0] + lik[1]), lik[1] / (lik[0] + lik[1]));
            errs.posterior = errs.posterior.max((post[i] - p1).abs());
            errs.normalization = errs.normalization.max((p0 + post[i] - 1.0).abs());
        }
    }
    errs
}

/// Scores drawn from a small grid so that ties are common.
pub fn tied_scores(rng: &mut rand_chacha::ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(0..5) as f64 / 4.0).collect()
}

/// AP and AUC against their pairwise oracles for one random instance with
/// `K ≤ 8`. Returns the absolute errors; `INFINITY` when definedness differs.
pub fn metric_trial(seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let k = rng.random_range(1..=8);
    let scores = if rng.random_bool(0.5) {
        tied_scores(&mut rng, k)
    } else {
        (0..k).map(|_| rng.random::<f64>()).collect()
    };
    let truth: Vec<u8> = (0..k).map(|_| rng.random_range(0..=1)).collect();
    let err = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (None, None) => 0.0,
        (Some(a), Some(b)) => (a - b).abs(),
        _ => f64::INFINITY,
    };
    (
        err(average_precision(&scores, &truth).unwrap(), ap_oracle(&scores, &truth)),
        err(roc_auc(&scores, &truth).unwrap(), auc_oracle(&scores, &truth)),
    )
}

/// Every truth vector and every score vector over `{0, ½, 1}` for `K ≤ 4`.
pub fn metric_enumeration() -> (f64, f64, usize) {
    let grid = [0.0, 0.5, 1.0];
    let (mut ap_err, mut auc_err, mut cases) = (0.0_f64, 0.0_f64, 0);
    for k in 1..=4usize {
        for s_code in 0..3usize.pow(k as u32) {
            let scores: Vec<f64> = (0..k).map(|j| grid[(s_code / 3usize.pow(j as u32)) % 3]).collect();
            for t_code in 0..(1usize << k) {
                let truth: Vec<u8> = (0..k).map(|j| ((t_code >> j) & 1) as u8).collect();
                let ap = average_precision(&scores, &truth).unwrap();
                let auc = roc_auc(&scores, &truth).unwrap();
                ap_err = ap_err.max(if opt_close(ap, ap_oracle(&scores, &truth), 0.0) {
                    0.0
                } else {
                    ap.zip(ap_oracle(&scores, &truth)).map_or(f64::INFINITY, |(a, b)| (a - b).abs())
                });
                auc_err = auc_err.max(if opt_close(auc, auc_oracle(&scores, &truth), 0.0) {
                    0.0
                } else {
                    auc.zip(auc_oracle(&scores, &truth)).map_or(f64::INFINITY, |(a, b)| (a - b).abs())
                });
                cases += 1;
            }
        }
    }
    (ap_err, auc_err, cases)
}
