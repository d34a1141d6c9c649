//! The affine-subspace classification head.
//!
//! For each label `i` the head holds an `e×d` normal matrix `Wᵢ` and two bias
//! vectors `bᵢ₀`, `bᵢ₁`. Together they define two parallel `(d−e)`-dimensional
//! affine subspaces `{z : Wᵢz + bᵢⱼ = 0}`. Training pulls a descriptor with
//! `yᵢ = j` toward subspace `j` (pull loss), pushes each pair of subspaces
//! apart (separation loss) and keeps the normals at unit length
//! (orthonormality loss).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, dot, norm_sq, orthonormalize_rows, Matrix};
use crate::rng::{self, Stream};

/// Default `ε` of the separation loss.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Per-label, per-class weights `α[i][y]` of the pull loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(Vec<[f64; 2]>);

impl ClassWeights {
    pub fn uniform(n: usize) -> Self {
        Self(vec![[1.0, 1.0]; n])
    }

    pub fn new(weights: Vec<[f64; 2]>) -> Result<Self> {
        if weights.iter().flatten().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Precondition(
                "class weights must be finite and non-negative".into(),
            ));
        }
        Ok(Self(weights))
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn get(&self, label: usize, class: u8) -> f64 {
        self.0[label][class as usize]
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|[a, b]| [a * s, b * s]).collect())
    }
}

/// Which penalty keeps the normals from collapsing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OrthoPenalty {
    /// No penalty.
    Off,
    /// `Σᵢ tr|WᵢWᵢᵀ − I|`: only the diagonal of the Gram matrix, i.e. row norms.
    #[default]
    Trace,
    /// `Σᵢ Σ_{jk} |(WᵢWᵢᵀ − I)_{jk}|`: also penalizes non-orthogonal rows.
    Entrywise,
}

/// Scalars of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    pub eps: f64,
    pub ortho: OrthoPenalty,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 5.0,
            eps: DEFAULT_EPS,
            ortho: OrthoPenalty::Trace,
        }
    }
}

/// The three loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l1.is_finite() && self.l2.is_finite() && self.l3.is_finite() && self.total.is_finite()
    }
}

/// Gradients with the same layout as [`SubspaceHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub dw: Vec<Matrix>,
    pub db0: Vec<Vec<f64>>,
    pub db1: Vec<Vec<f64>>,
}

impl HeadGradients {
    pub fn zeros_like(head: &SubspaceHead) -> Self {
        Self {
            dw: vec![Matrix::zeros(head.e, head.d); head.n],
            db0: vec![vec![0.0; head.e]; head.n],
            db1: vec![vec![0.0; head.e]; head.n],
        }
    }
}

/// Output of [`SubspaceHead::backward`]: losses, parameter gradients and the
/// gradient of the batch objective with respect to every descriptor.
#[derive(Debug, Clone)]
pub struct HeadBackward {
    pub loss: LossBreakdown,
    pub grads: HeadGradients,
    /// `B×d`; row `k` is `∂total/∂z⁽ᵏ⁾` (already divided by `B`).
    pub dz: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceHead {
    n: usize,
    d: usize,
    e: usize,
    w: Vec<Matrix>,
    b0: Vec<Vec<f64>>,
    b1: Vec<Vec<f64>>,
}

fn check_dims(n: usize, d: usize, e: usize) -> Result<()> {
    if n == 0 || d == 0 || e == 0 {
        return Err(Error::Dimension(format!(
            "head sizes must be positive (n={n}, d={d}, e={e})"
        )));
    }
    if e > d {
        return Err(Error::Dimension(format!(
            "projection dimension e={e} exceeds descriptor dimension d={d}"
        )));
    }
    Ok(())
}

pub(crate) fn check_labels(y: &[u8], n: usize) -> Result<()> {
    check_len("label vector", n, y.len())?;
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::Precondition(format!("label value {bad} is not 0 or 1")));
    }
    Ok(())
}

impl SubspaceHead {
    /// Random head with orthonormal rows in every `Wᵢ` and standard normal
    /// biases.
    pub fn init(n: usize, d: usize, e: usize, seed: u64) -> Result<Self> {
        check_dims(n, d, e)?;
        let mut rng = rng::stream(seed, Stream::HeadInit);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let mut w = Vec::with_capacity(n);
        let mut b0 = Vec::with_capacity(n);
        let mut b1 = Vec::with_capacity(n);
        for _ in 0..n {
            let m = loop {
                let data = (0..e * d).map(|_| normal()).collect();
                let mut m = Matrix::from_vec(e, d, data)?;
                if orthonormalize_rows(&mut m) {
                    break m;
                }
            };
            w.push(m);
            b0.push((0..e).map(|_| normal()).collect());
            b1.push((0..e).map(|_| normal()).collect());
        }
        Ok(Self { n, d, e, w, b0, b1 })
    }

    pub fn from_parts(w: Vec<Matrix>, b0: Vec<Vec<f64>>, b1: Vec<Vec<f64>>) -> Result<Self> {
        let n = w.len();
        let (e, d) = w.first().map_or((0, 0), |m| (m.rows(), m.cols()));
        check_dims(n, d, e)?;
        check_len("b0 count", n, b0.len())?;
        check_len("b1 count", n, b1.len())?;
        for i in 0..n {
            if w[i].rows() != e || w[i].cols() != d {
                return Err(Error::Dimension(format!(
                    "W[{i}] is {}x{}, expected {e}x{d}",
                    w[i].rows(),
                    w[i].cols()
                )));
            }
            check_len("b0 length", e, b0[i].len())?;
            check_len("b1 length", e, b1[i].len())?;
        }
        Ok(Self { n, d, e, w, b0, b1 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn e(&self) -> usize {
        self.e
    }

    pub fn normals(&self, i: usize) -> &Matrix {
        &self.w[i]
    }

    pub fn normals_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.w[i]
    }

    pub fn bias(&self, i: usize, class: u8) -> &[f64] {
        if class == 0 {
            &self.b0[i]
        } else {
            &self.b1[i]
        }
    }

    pub fn bias_mut(&mut self, i: usize, class: u8) -> &mut Vec<f64> {
        if class == 0 {
            &mut self.b0[i]
        } else {
            &mut self.b1[i]
        }
    }

    /// Swaps the class-0 and class-1 biases of every label.
    pub fn swap_classes(&mut self) {
        std::mem::swap(&mut self.b0, &mut self.b1);
    }

    /// Mean Euclidean norm over all rows of all normal matrices.
    pub fn mean_row_norm(&self) -> f64 {
        let total: f64 = self
            .w
            .iter()
            .flat_map(|m| m.iter_rows())
            .map(|r| norm_sq(r).sqrt())
            .sum();
        total / (self.n * self.e) as f64
    }

    fn check_label_index(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::Dimension(format!(
                "label index {i} out of range for n={}",
                self.n
            )));
        }
        Ok(())
    }

    fn check_alpha(&self, alpha: &ClassWeights) -> Result<()> {
        check_len("class weight rows", self.n, alpha.n())
    }

    /// `Wᵢz + bᵢ_class`, or `Wᵢz` when `class` is `None`.
    pub fn project(&self, i: usize, z: &[f64], class: Option<u8>) -> Result<Vec<f64>> {
        self.check_label_index(i)?;
        check_len("descriptor", self.d, z.len())?;
        let mut u = self.w[i].matvec(z)?;
        match class {
            None => {}
            Some(c @ (0 | 1)) => axpy(1.0, self.bias(i, c), &mut u),
            Some(c) => return Err(Error::Precondition(format!("class {c} is not 0 or 1"))),
        }
        Ok(u)
    }

    /// Distances `(‖Wᵢz + bᵢ₀‖, ‖Wᵢz + bᵢ₁‖)` from `z` to both subspaces of label `i`.
    pub fn distances(&self, i: usize, z: &[f64]) -> Result<(f64, f64)> {
        let u = self.project(i, z, None)?;
        let d = |b: &[f64]| -> f64 {
            u.iter()
                .zip(b)
                .map(|(a, c)| (a + c) * (a + c))
                .sum::<f64>()
                .sqrt()
        };
        Ok((d(&self.b0[i]), d(&self.b1[i])))
    }

    /// `Σᵢ α[i][yᵢ] ‖Wᵢz + b_{i,yᵢ}‖²`.
    pub fn loss_pull(&self, z: &[f64], y: &[u8], alpha: &ClassWeights) -> Result<f64> {
        check_len("descriptor", self.d, z.len())?;
        check_labels(y, self.n)?;
        self.check_alpha(alpha)?;
        let mut total = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let r = self.project(i, z, Some(yi))?;
            total += alpha.get(i, yi) * norm_sq(&r);
        }
        Ok(total)
    }

    /// `Σᵢ 1 / (‖bᵢ₀ − bᵢ₁‖² + ε)`.
    pub fn loss_separation(&self, eps: f64) -> Result<f64> {
        check_eps(eps)?;
        Ok((0..self.n).map(|i| 1.0 / (self.bias_gap_sq(i) + eps)).sum())
    }

    fn bias_gap_sq(&self, i: usize) -> f64 {
        self.b0[i]
            .iter()
            .zip(&self.b1[i])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// `Σᵢ tr|WᵢWᵢᵀ − I|`, i.e. `Σᵢ Σⱼ |‖wᵢⱼ‖² − 1|`.
    pub fn loss_orthonormality(&self) -> f64 {
        self.ortho_penalty(OrthoPenalty::Trace)
    }

    pub fn ortho_penalty(&self, kind: OrthoPenalty) -> f64 {
        match kind {
            OrthoPenalty::Off => 0.0,
            OrthoPenalty::Trace => self
                .w
                .iter()
                .flat_map(|m| m.iter_rows())
                .map(|row| (norm_sq(row) - 1.0).abs())
                .sum(),
            OrthoPenalty::Entrywise => self
                .w
                .iter()
                .map(|m| {
                    let g = m.gram();
                    let mut s = 0.0;
                    for a in 0..self.e {
                        for b in 0..self.e {
                            let target = if a == b { 1.0 } else { 0.0 };
                            s += (g[(a, b)] - target).abs();
                        }
                    }
                    s
                })
                .sum(),
        }
    }

    fn check_batch(&self, batch_z: &Matrix, batch_y: &LabelMatrix, alpha: &ClassWeights) -> Result<()> {
        if batch_z.rows() == 0 {
            return Err(Error::Precondition("empty batch".into()));
        }
        check_len("descriptor", self.d, batch_z.cols())?;
        check_len("batch labels", batch_z.rows(), batch_y.rows())?;
        check_len("label vector", self.n, batch_y.cols())?;
        self.check_alpha(alpha)
    }

    /// Mean pull loss over the batch plus `β·ℓ2 + ℓ3`, each added once.
    pub fn loss_total(
        &self,
        batch_z: &Matrix,
        batch_y: &LabelMatrix,
        alpha: &ClassWeights,
        cfg: &LossConfig,
    ) -> Result<LossBreakdown> {
        self.check_batch(batch_z, batch_y, alpha)?;
        let mut l1 = 0.0;
        for (z, y) in batch_z.iter_rows().zip(batch_y.iter_rows()) {
            l1 += self.loss_pull(z, y, alpha)?;
        }
        l1 /= batch_z.rows() as f64;
        let l2 = self.loss_separation(cfg.eps)?;
        let l3 = self.ortho_penalty(cfg.ortho);
        Ok(LossBreakdown {
            l1,
            l2,
            l3,
            total: l1 + cfg.beta * l2 + l3,
        })
    }

    pub fn head_gradients(
        &self,
        batch_z: &Matrix,
        batch_y: &LabelMatrix,
        alpha: &ClassWeights,
        cfg: &LossConfig,
    ) -> Result<HeadGradients> {
        Ok(self.backward(batch_z, batch_y, alpha, cfg)?.grads)
    }

    /// `∂ℓ1/∂z = Σᵢ 2α[i][yᵢ] Wᵢᵀ(Wᵢz + b_{i,yᵢ})`.
    pub fn feature_gradients(&self, z: &[f64], y: &[u8], alpha: &ClassWeights) -> Result<Vec<f64>> {
        check_len("descriptor", self.d, z.len())?;
        check_labels(y, self.n)?;
        self.check_alpha(alpha)?;
        let mut g = vec![0.0; self.d];
        for (i, &yi) in y.iter().enumerate() {
            let r = self.project(i, z, Some(yi))?;
            let back = self.w[i].matvec_t(&r)?;
            axpy(2.0 * alpha.get(i, yi), &back, &mut g);
        }
        Ok(g)
    }

    /// Loss, parameter gradients and descriptor gradients in one pass.
    pub fn backward(
        &self,
        batch_z: &Matrix,
        batch_y: &LabelMatrix,
        alpha: &ClassWeights,
        cfg: &LossConfig,
    ) -> Result<HeadBackward> {
        self.check_batch(batch_z, batch_y, alpha)?;
        check_eps(cfg.eps)?;
        for y in batch_y.iter_rows() {
            check_labels(y, self.n)?;
        }
        let batch = batch_z.rows();
        let inv_b = 1.0 / batch as f64;
        let mut grads = HeadGradients::zeros_like(self);
        let mut dz = Matrix::zeros(batch, self.d);
        let mut l1 = 0.0;

        for (k, (z, y)) in batch_z.iter_rows().zip(batch_y.iter_rows()).enumerate() {
            for (i, &yi) in y.iter().enumerate() {
                let a = alpha.get(i, yi);
                let mut r = self.w[i].matvec(z)?;
                axpy(1.0, self.bias(i, yi), &mut r);
                l1 += a * norm_sq(&r);
                let scale = 2.0 * a * inv_b;
                grads.dw[i].add_outer(scale, &r, z);
                let db = if yi == 0 { &mut grads.db0[i] } else { &mut grads.db1[i] };
                axpy(scale, &r, db);
                let back = self.w[i].matvec_t(&r)?;
                axpy(scale, &back, dz.row_mut(k));
            }
        }
        l1 *= inv_b;

        let mut l2 = 0.0;
        for i in 0..self.n {
            let s = self.bias_gap_sq(i) + cfg.eps;
            l2 += 1.0 / s;
            // d/db0 (1/s) = -2(b0 - b1)/s²
            let c = -2.0 * cfg.beta / (s * s);
            for j in 0..self.e {
                let diff = self.b0[i][j] - self.b1[i][j];
                grads.db0[i][j] += c * diff;
                grads.db1[i][j] -= c * diff;
            }
        }

        let l3 = self.ortho_penalty(cfg.ortho);
        self.add_ortho_gradient(cfg.ortho, &mut grads.dw);

        Ok(HeadBackward {
            loss: LossBreakdown {
                l1,
                l2,
                l3,
                total: l1 + cfg.beta * l2 + l3,
            },
            grads,
            dz,
        })
    }

    // Subgradient with sign(0) = 0.
    fn add_ortho_gradient(&self, kind: OrthoPenalty, dw: &mut [Matrix]) {
        match kind {
            OrthoPenalty::Off => {}
            OrthoPenalty::Trace => {
                for (m, g) in self.w.iter().zip(dw.iter_mut()) {
                    for r in 0..self.e {
                        let s = sign(norm_sq(m.row(r)) - 1.0);
                        axpy(2.0 * s, m.row(r), g.row_mut(r));
                    }
                }
            }
            OrthoPenalty::Entrywise => {
                // d/dW Σ|G − I| = (S + Sᵀ) W = 2 S W with S = sign(G − I) symmetric.
                for (m, g) in self.w.iter().zip(dw.iter_mut()) {
                    for a in 0..self.e {
                        for b in 0..self.e {
                            let target = if a == b { 1.0 } else { 0.0 };
                            let s = sign(dot(m.row(a), m.row(b)) - target);
                            if s != 0.0 {
                                axpy(2.0 * s, m.row(b), g.row_mut(a));
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("eps must be positive, got {eps}")))
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// On-disk layout: `{"n","d","e","W","b0","b1"}` with each `Wᵢ` flattened
/// row-major.
#[derive(Serialize, Deserialize)]
struct HeadRepr {
    n: usize,
    d: usize,
    e: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b0: Vec<Vec<f64>>,
    b1: Vec<Vec<f64>>,
}

impl Serialize for SubspaceHead {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        HeadRepr {
            n: self.n,
            d: self.d,
            e: self.e,
            w: self.w.iter().map(|m| m.as_slice().to_vec()).collect(),
            b0: self.b0.clone(),
            b1: self.b1.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SubspaceHead {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = HeadRepr::deserialize(de)?;
        let w = r
            .w
            .into_iter()
            .map(|flat| Matrix::from_vec(r.e, r.d, flat))
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let head = SubspaceHead::from_parts(w, r.b0, r.b1).map_err(D::Error::custom)?;
        if head.n != r.n {
            return Err(D::Error::custom(format!(
                "n={} but {} normal matrices",
                r.n, head.n
            )));
        }
        Ok(head)
    }
}


impl crate::adam::Params for SubspaceHead {
    fn blocks(&self) -> Vec<&[f64]> {
        self.w
            .iter()
            .map(Matrix::as_slice)
            .chain(self.b0.iter().map(Vec::as_slice))
            .chain(self.b1.iter().map(Vec::as_slice))
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.w
            .iter_mut()
            .map(Matrix::as_mut_slice)
            .chain(self.b0.iter_mut().map(Vec::as_mut_slice))
            .chain(self.b1.iter_mut().map(Vec::as_mut_slice))
            .collect()
    }
}

impl crate::adam::Params for HeadGradients {
    fn blocks(&self) -> Vec<&[f64]> {
        self.dw
            .iter()
            .map(Matrix::as_slice)
            .chain(self.db0.iter().map(Vec::as_slice))
            .chain(self.db1.iter().map(Vec::as_slice))
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.dw
            .iter_mut()
            .map(Matrix::as_mut_slice)
            .chain(self.db0.iter_mut().map(Vec::as_mut_slice))
            .chain(self.db1.iter_mut().map(Vec::as_mut_slice))
            .collect()
    }
}
