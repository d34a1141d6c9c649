//! Turning descriptors into per-label probabilities.
//!
//! Three scorers are provided:
//! - [`KdeModel`]: Gaussian kernel density estimates of the projected training
//!   descriptors `Wᵢz⁽ᵏ⁾` for each label and class, combined into a posterior
//!   under a uniform prior.
//! - [`distance_scores`]: ratio of distances to the two subspaces of a label.
//! - [`KnnModel`]: inverse-distance weighted vote of the nearest training
//!   descriptors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::error::{check_len, Error, Result};
use crate::head::SubspaceHead;
use crate::linalg::{dist_sq, Matrix};

/// Which training points enter the likelihood of class `j`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdeNormalization {
    /// Mean over the points whose label equals `j`.
    #[default]
    ClassConditional,
    /// Mean over all `K` training points regardless of class. Both classes
    /// then get the same density and the posterior is always 0.5; kept for
    /// inspection only.
    AllPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    pub n: usize,
    pub e: usize,
    pub delta: f64,
    #[serde(default)]
    pub normalization: KdeNormalization,
    /// `points[i][j]` holds `Wᵢz⁽ᵏ⁾` for every training sample with `yᵢ = j`.
    points: Vec<[Vec<Vec<f64>>; 2]>,
}

/// Isotropic Gaussian `exp(−‖r‖²/(2δ²)) / (2πδ²)^{e/2}` evaluated at `‖r‖² = dist_sq`.
#[inline]
pub fn gaussian_kernel(dist_sq: f64, delta: f64, e: usize) -> f64 {
    let norm = (2.0 * PI * delta * delta).powf(e as f64 / 2.0);
    (-dist_sq / (2.0 * delta * delta)).exp() / norm
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("bandwidth must be positive, got {delta}")))
    }
}

impl KdeModel {
    /// Stores `Wᵢz⁽ᵏ⁾` (no bias) partitioned by label and class.
    pub fn fit(
        head: &SubspaceHead,
        descriptors: &Matrix,
        labels: &LabelMatrix,
        delta: f64,
        normalization: KdeNormalization,
    ) -> Result<Self> {
        check_delta(delta)?;
        check_len("descriptor width", head.d(), descriptors.cols())?;
        check_len("label rows", descriptors.rows(), labels.rows())?;
        check_len("label columns", head.n(), labels.cols())?;
        let mut points: Vec<[Vec<Vec<f64>>; 2]> = vec![[Vec::new(), Vec::new()]; head.n()];
        for (z, y) in descriptors.iter_rows().zip(labels.iter_rows()) {
            for (i, &yi) in y.iter().enumerate() {
                points[i][yi as usize].push(head.project(i, z, None)?);
            }
        }
        for (i, per_class) in points.iter().enumerate() {
            for class in [0u8, 1] {
                if per_class[class as usize].is_empty() {
                    return Err(Error::EmptyClass {
                        label: i,
                        name: format!("#{i}"),
                        class,
                    });
                }
            }
        }
        Ok(Self {
            n: head.n(),
            e: head.e(),
            delta,
            normalization,
            points,
        })
    }

    pub fn points(&self, i: usize, class: u8) -> &[Vec<f64>] {
        &self.points[i][class as usize]
    }

    /// Same stored points, different bandwidth.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self {
            delta,
            ..self.clone()
        })
    }

    /// Checks shapes after deserialization.
    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_len("KDE label count", self.n, self.points.len())?;
        for (i, per_class) in self.points.iter().enumerate() {
            for (class, pts) in per_class.iter().enumerate() {
                if pts.is_empty() {
                    return Err(Error::EmptyClass {
                        label: i,
                        name: format!("#{i}"),
                        class: class as u8,
                    });
                }
                for p in pts {
                    check_len("KDE point", self.e, p.len())?;
                }
            }
        }
        Ok(())
    }

    fn check_index(&self, i: usize, class: u8) -> Result<()> {
        if i >= self.n || class > 1 {
            return Err(Error::Dimension(format!(
                "(label {i}, class {class}) out of range for n={}",
                self.n
            )));
        }
        Ok(())
    }

    /// `p(u | yᵢ = class)`: mean Gaussian kernel between `u` and the stored points.
    pub fn likelihood(&self, i: usize, class: u8, u: &[f64]) -> Result<f64> {
        self.check_index(i, class)?;
        check_len("projected point", self.e, u.len())?;
        let mean_kernel = |pts: &[Vec<f64>]| -> f64 {
            pts.iter()
                .map(|p| gaussian_kernel(dist_sq(u, p), self.delta, self.e))
                .sum::<f64>()
        };
        Ok(match self.normalization {
            KdeNormalization::ClassConditional => {
                let pts = &self.points[i][class as usize];
                mean_kernel(pts) / pts.len() as f64
            }
            KdeNormalization::AllPoints => {
                let [a, b] = &self.points[i];
                (mean_kernel(a) + mean_kernel(b)) / (a.len() + b.len()) as f64
            }
        })
    }

    /// `P(yᵢ = 1 | Wᵢz)` for every label, uniform prior.
    ///
    /// When both likelihoods of a label underflow to zero the label falls back
    /// to [`distance_scores`].
    pub fn posterior(&self, head: &SubspaceHead, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.posterior_counting(head, z)?.0)
    }

    fn posterior_counting(&self, head: &SubspaceHead, z: &[f64]) -> Result<(Vec<f64>, usize)> {
        check_len("KDE label count", self.n, head.n())?;
        check_len("descriptor", head.d(), z.len())?;
        let mut out = Vec::with_capacity(self.n);
        let mut fallbacks = 0;
        for i in 0..self.n {
            let u = head.project(i, z, None)?;
            let p0 = self.likelihood(i, 0, &u)?;
            let p1 = self.likelihood(i, 1, &u)?;
            let sum = p0 + p1;
            if sum > 0.0 && sum.is_finite() {
                out.push(p1 / sum);
            } else {
                log::debug!("label {i}: both KDE likelihoods underflowed, using distance ratio");
                fallbacks += 1;
                out.push(distance_score(head, i, z, DistanceKind::Squared)?);
            }
        }
        Ok((out, fallbacks))
    }

    /// Posterior for every row of `descriptors`.
    pub fn posterior_batch(&self, head: &SubspaceHead, descriptors: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(descriptors.rows() * self.n);
        let mut fallbacks = 0;
        for z in descriptors.iter_rows() {
            let (p, f) = self.posterior_counting(head, z)?;
            data.extend(p);
            fallbacks += f;
        }
        if fallbacks > 0 {
            log::warn!(
                "KDE likelihoods underflowed for {fallbacks} (sample, label) pairs at bandwidth {}; \
                 used distance ratio instead",
                self.delta
            );
        }
        Matrix::from_vec(descriptors.rows(), self.n, data)
    }
}

/// Distance form used by [`distance_scores`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// `d₀² / (d₀² + d₁²)`.
    #[default]
    Squared,
    /// `d₀ / (d₀ + d₁)`.
    Plain,
}

fn distance_score(head: &SubspaceHead, i: usize, z: &[f64], kind: DistanceKind) -> Result<f64> {
    let (d0, d1) = head.distances(i, z)?;
    let (a, b) = match kind {
        DistanceKind::Squared => (d0 * d0, d1 * d1),
        DistanceKind::Plain => (d0, d1),
    };
    Ok(if a + b == 0.0 { 0.5 } else { a / (a + b) })
}

/// `P(yᵢ = 1)` from the distances `dᵢ₀`, `dᵢ₁` of `z` to the two subspaces of
/// each label; 0.5 where both distances vanish.
pub fn distance_scores(head: &SubspaceHead, z: &[f64], kind: DistanceKind) -> Result<Vec<f64>> {
    check_len("descriptor", head.d(), z.len())?;
    (0..head.n()).map(|i| distance_score(head, i, z, kind)).collect()
}

pub fn distance_scores_batch(head: &SubspaceHead, descriptors: &Matrix, kind: DistanceKind) -> Result<Matrix> {
    let mut data = Vec::with_capacity(descriptors.rows() * head.n());
    for z in descriptors.iter_rows() {
        data.extend(distance_scores(head, z, kind)?);
    }
    Matrix::from_vec(descriptors.rows(), head.n(), data)
}

/// Neighbors used by the kNN baseline unless configured otherwise.
pub const DEFAULT_KNN_K: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    descriptors: Matrix,
    labels: LabelMatrix,
}

impl KnnModel {
    /// `k` larger than the number of stored samples is reduced to it.
    pub fn fit(descriptors: Matrix, labels: LabelMatrix, k: usize) -> Result<Self> {
        if descriptors.rows() == 0 {
            return Err(Error::EmptyModel("kNN needs at least one stored descriptor".into()));
        }
        if k == 0 {
            return Err(Error::Config("kNN neighbor count must be positive".into()));
        }
        check_len("label rows", descriptors.rows(), labels.rows())?;
        let k = if k > descriptors.rows() {
            log::warn!(
                "kNN neighbor count {k} exceeds {} stored samples; using {}",
                descriptors.rows(),
                descriptors.rows()
            );
            descriptors.rows()
        } else {
            k
        };
        Ok(Self { k, descriptors, labels })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_labels(&self) -> usize {
        self.labels.cols()
    }

    /// Inverse-distance weighted label frequencies among the `k` nearest
    /// descriptors. Neighbors at distance zero, if any, take all the weight.
    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("descriptor", self.descriptors.cols(), z.len())?;
        let mut dists: Vec<(f64, usize)> = self
            .descriptors
            .iter_rows()
            .enumerate()
            .map(|(idx, s)| (dist_sq(s, z).sqrt(), idx))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = &dists[..self.k];
        let exact: Vec<usize> = nearest.iter().filter(|(d, _)| *d == 0.0).map(|&(_, i)| i).collect();
        let weighted: Vec<(f64, usize)> = if exact.is_empty() {
            nearest.iter().map(|&(d, i)| (1.0 / d, i)).collect()
        } else {
            exact.into_iter().map(|i| (1.0, i)).collect()
        };
        let total: f64 = weighted.iter().map(|(w, _)| w).sum();
        let mut out = vec![0.0; self.n_labels()];
        for (w, idx) in weighted {
            for (o, &y) in out.iter_mut().zip(self.labels.row(idx)) {
                *o += w * f64::from(y);
            }
        }
        out.iter_mut().for_each(|o| *o /= total);
        Ok(out)
    }

    pub fn predict_batch(&self, descriptors: &Matrix) -> Result<Matrix> {
        let mut data = Vec::with_capacity(descriptors.rows() * self.n_labels());
        for z in descriptors.iter_rows() {
            data.extend(self.predict(z)?);
        }
        Matrix::from_vec(descriptors.rows(), self.n_labels(), data)
    }
}

#[derive(Serialize, Deserialize)]
struct KnnRepr {
    k: usize,
    descriptors: Vec<Vec<f64>>,
    labels: Vec<Vec<u8>>,
}

impl Serialize for KnnModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KnnRepr {
            k: self.k,
            descriptors: self.descriptors.iter_rows().map(<[f64]>::to_vec).collect(),
            labels: self.labels.iter_rows().map(<[u8]>::to_vec).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for KnnModel {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = KnnRepr::deserialize(de)?;
        let desc = Matrix::from_rows(&r.descriptors).map_err(D::Error::custom)?;
        let labels = LabelMatrix::from_rows(&r.labels).map_err(D::Error::custom)?;
        KnnModel::fit(desc, labels, r.k).map_err(D::Error::custom)
    }
}
