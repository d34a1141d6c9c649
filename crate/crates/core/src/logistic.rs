//! Multi-output logistic regression head with weighted binary cross-entropy.
//!
//! This is the conventional baseline: one sigmoid per label. For binary labels
//! a two-way softmax per label is the same model.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::adam::Params;
use crate::data::LabelMatrix;
use crate::error::{check_len, Error, Result};
use crate::head::{check_labels, ClassWeights};
use crate::linalg::{axpy, Matrix};
use crate::rng::{self, Stream};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` inside the log.
pub const PROB_CLAMP: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticHead {
    /// `n×d`.
    v_weights: Matrix,
    v_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticGradients {
    pub d_weights: Matrix,
    pub d_bias: Vec<f64>,
}

impl LogisticHead {
    /// Small random weights (std `1/√d`), zero bias.
    pub fn init(n: usize, d: usize, seed: u64) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Dimension(format!("logistic head sizes must be positive (n={n}, d={d})")));
        }
        let mut rng = rng::stream(seed, Stream::LogisticInit);
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
        let data = (0..n * d).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            v_weights: Matrix::from_vec(n, d, data)?,
            v_bias: vec![0.0; n],
        })
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        check_len("logistic bias", weights.rows(), bias.len())?;
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::Dimension("logistic head sizes must be positive".into()));
        }
        Ok(Self {
            v_weights: weights,
            v_bias: bias,
        })
    }

    pub fn n(&self) -> usize {
        self.v_weights.rows()
    }

    pub fn d(&self) -> usize {
        self.v_weights.cols()
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("descriptor", self.d(), z.len())?;
        let mut s = self.v_weights.matvec(z)?;
        axpy(1.0, &self.v_bias, &mut s);
        Ok(s)
    }

    /// `σ(Vz + v)`.
    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits(z)?.into_iter().map(sigmoid).collect())
    }

    /// Weighted BCE of one sample and its gradients with respect to `V`, `v` and `z`.
    pub fn gradients(
        &self,
        z: &[f64],
        y: &[u8],
        weights: &ClassWeights,
    ) -> Result<(f64, LogisticGradients, Vec<f64>)> {
        check_labels(y, self.n())?;
        check_len("class weight rows", self.n(), weights.n())?;
        let p = self.predict(z)?;
        let loss = bce_loss(&p, y, weights)?;
        // ∂/∂logit of −w[y ln p + (1−y) ln(1−p)] is w(p − y).
        let dlogit: Vec<f64> = p
            .iter()
            .zip(y)
            .enumerate()
            .map(|(i, (&pi, &yi))| weights.get(i, yi) * (pi - f64::from(yi)))
            .collect();
        let mut d_weights = Matrix::zeros(self.n(), self.d());
        d_weights.add_outer(1.0, &dlogit, z);
        let dz = self.v_weights.matvec_t(&dlogit)?;
        Ok((
            loss,
            LogisticGradients {
                d_weights,
                d_bias: dlogit,
            },
            dz,
        ))
    }

    /// Mean weighted BCE over a batch, its parameter gradients and per-sample `∂/∂z` (divided by `B`).
    pub fn backward(
        &self,
        batch_z: &Matrix,
        batch_y: &LabelMatrix,
        weights: &ClassWeights,
    ) -> Result<(f64, LogisticGradients, Matrix)> {
        if batch_z.rows() == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        check_len("batch labels", batch_z.rows(), batch_y.rows())?;
        let inv_b = 1.0 / batch_z.rows() as f64;
        let mut total = 0.0;
        let mut grads = LogisticGradients {
            d_weights: Matrix::zeros(self.n(), self.d()),
            d_bias: vec![0.0; self.n()],
        };
        let mut dz = Matrix::zeros(batch_z.rows(), self.d());
        for (k, (z, y)) in batch_z.iter_rows().zip(batch_y.iter_rows()).enumerate() {
            let (l, g, gz) = self.gradients(z, y, weights)?;
            total += l;
            axpy(inv_b, g.d_weights.as_slice(), grads.d_weights.as_mut_slice());
            axpy(inv_b, &g.d_bias, &mut grads.d_bias);
            axpy(inv_b, &gz, dz.row_mut(k));
        }
        Ok((total * inv_b, grads, dz))
    }

    pub fn mean_loss(&self, batch_z: &Matrix, batch_y: &LabelMatrix, weights: &ClassWeights) -> Result<f64> {
        Ok(self.backward(batch_z, batch_y, weights)?.0)
    }
}

/// `−Σᵢ w[i][yᵢ] (yᵢ ln pᵢ + (1 − yᵢ) ln(1 − pᵢ))` with clamped probabilities.
pub fn bce_loss(probs: &[f64], y: &[u8], weights: &ClassWeights) -> Result<f64> {
    check_len("probabilities", y.len(), probs.len())?;
    check_labels(y, probs.len())?;
    check_len("class weight rows", y.len(), weights.n())?;
    let mut total = 0.0;
    for (i, (&p, &yi)) in probs.iter().zip(y).enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Precondition(format!("probability {p} outside [0, 1]")));
        }
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let ll = if yi == 1 { p.ln() } else { (1.0 - p).ln() };
        total -= weights.get(i, yi) * ll;
    }
    Ok(total)
}

impl Params for LogisticHead {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![self.v_weights.as_slice(), &self.v_bias]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.v_weights.as_mut_slice(), &mut self.v_bias]
    }
}

impl Params for LogisticGradients {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![self.d_weights.as_slice(), &self.d_bias]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.d_weights.as_mut_slice(), &mut self.d_bias]
    }
}

/// On-disk layout: `{"n","d","V","v"}` with `V` flattened row-major.
#[derive(Serialize, Deserialize)]
struct LogisticRepr {
    n: usize,
    d: usize,
    #[serde(rename = "V")]
    weights: Vec<f64>,
    v: Vec<f64>,
}

impl Serialize for LogisticHead {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LogisticRepr {
            n: self.n(),
            d: self.d(),
            weights: self.v_weights.as_slice().to_vec(),
            v: self.v_bias.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LogisticHead {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = LogisticRepr::deserialize(de)?;
        let m = Matrix::from_vec(r.n, r.d, r.weights).map_err(D::Error::custom)?;
        LogisticHead::from_parts(m, r.v).map_err(D::Error::custom)
    }
}
