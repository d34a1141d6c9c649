//! Finite-difference checks on random small instances. Each check returns
//! the largest relative error it saw so callers can assert or report.

use asmlc::adam::Params;
use asmlc::head::{HeadGradients, LossConfig, OrthoPenalty, SubspaceHead, DEFAULT_EPS};
use asmlc::linalg::Matrix;
use asmlc::logistic::LogisticHead;
use asmlc::mlp::{Activation, Mlp, MlpGradients};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

/// Instances closer than this to a kink of `|·|` or relu are redrawn.
const KINK_MARGIN: f64 = 1e-3;
/// Bias pairs closer than this (squared) are redrawn: `1/x` is too curved there
/// for a 1e-5 central difference to reach 1e-4.
const MIN_GAP_SQ: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default)]
pub struct HeadErrors {
    pub l1: f64,
    pub l2: f64,
    pub l3_trace: f64,
    pub l3_entrywise: f64,
    pub total: f64,
    pub dz: f64,
    pub pull_dz: f64,
}

impl HeadErrors {
    pub fn max(&self) -> f64 {
        [self.l1, self.l2, self.l3_trace, self.l3_entrywise, self.total, self.dz, self.pull_dz]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn merge(self, o: HeadErrors) -> HeadErrors {
        HeadErrors {
            l1: self.l1.max(o.l1),
            l2: self.l2.max(o.l2),
            l3_trace: self.l3_trace.max(o.l3_trace),
            l3_entrywise: self.l3_entrywise.max(o.l3_entrywise),
            total: self.total.max(o.total),
            dz: self.dz.max(o.dz),
            pull_dz: self.pull_dz.max(o.pull_dz),
        }
    }
}

fn near_kink(head: &SubspaceHead) -> bool {
    (0..head.n()).any(|i| {
        let g = head.normals(i).gram();
        (0..head.e()).any(|a| {
            (0..head.e()).any(|b| {
                let target = if a == b { 1.0 } else { 0.0 };
                (g[(a, b)] - target).abs() < KINK_MARGIN
            })
        })
    })
}

fn small_gap(head: &SubspaceHead) -> bool {
    (0..head.n()).any(|i| asmlc::linalg::dist_sq(head.bias(i, 0), head.bias(i, 1)) < MIN_GAP_SQ)
}

fn grad_diff(a: &HeadGradients, b: &HeadGradients) -> Vec<Vec<f64>> {
    a.blocks()
        .iter()
        .zip(b.blocks())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

fn as_refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|b| b.as_slice()).collect()
}

/// Draws one kink-free `(head, batch)` instance with `n, d, e ≤ 8` and checks
/// every loss term against central differences.
pub fn head_instance(seed: u64) -> HeadErrors {
    let mut rng = rng(seed);
    let (head, z, y, alpha, beta) = loop {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(1..=8);
        let e = rng.random_range(1..=d);
        let b = rng.random_range(1..=4);
        let head = random_head(&mut rng, n, d, e);
        let z = Matrix::from_vec(b, d, normals(&mut rng, b * d, 1.0)).unwrap();
        let y = random_labels(&mut rng, b, n);
        let alpha = random_weights(&mut rng, n);
        let beta = rng.random_range(0.5..10.0);
        if !near_kink(&head) && !small_gap(&head) {
            break (head, z, y, alpha, beta);
        }
    };
    let cfg = |beta: f64, ortho: OrthoPenalty| LossConfig {
        beta,
        eps: DEFAULT_EPS,
        ortho,
    };
    let grads = |c: LossConfig| head.backward(&z, &y, &alpha, &c).unwrap();
    let base = grads(cfg(0.0, OrthoPenalty::Off));
    let mut errs = HeadErrors::default();

    let num = fd_params(&head, |h| h.loss_total(&z, &y, &alpha, &cfg(0.0, OrthoPenalty::Off)).unwrap().total);
    errs.l1 = max_rel_err(&base.grads.blocks(), &num);

    let sep = grad_diff(&grads(cfg(beta, OrthoPenalty::Off)).grads, &base.grads);
    let num = fd_params(&head, |h| beta * h.loss_separation(DEFAULT_EPS).unwrap());
    errs.l2 = max_rel_err(&as_refs(&sep), &num);

    for (kind, slot) in [
        (OrthoPenalty::Trace, &mut errs.l3_trace),
        (OrthoPenalty::Entrywise, &mut errs.l3_entrywise),
    ] {
        let ortho = grad_diff(&grads(cfg(0.0, kind)).grads, &base.grads);
        let num = fd_params(&head, |h| h.ortho_penalty(kind));
        *slot = max_rel_err(&as_refs(&ortho), &num);
    }

    let full = cfg(beta, if seed % 2 == 0 { OrthoPenalty::Trace } else { OrthoPenalty::Entrywise });
    let all = grads(full);
    let num = fd_params(&head, |h| h.loss_total(&z, &y, &alpha, &full).unwrap().total);
    errs.total = max_rel_err(&all.grads.blocks(), &num);

    let (rows, cols) = (z.rows(), z.cols());
    let num = fd_vec(z.as_slice(), |flat| {
        let zz = Matrix::from_vec(rows, cols, flat.to_vec()).unwrap();
        head.loss_total(&zz, &y, &alpha, &full).unwrap().total
    });
    errs.dz = max_rel_err(&[all.dz.as_slice()], &[num]);

    let z0 = z.row(0);
    let analytic = head.feature_gradients(z0, y.row(0), &alpha).unwrap();
    let num = fd_vec(z0, |zz| head.loss_pull(zz, y.row(0), &alpha).unwrap());
    errs.pull_dz = max_rel_err(&[&analytic], &[num]);
    errs
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LogisticErrors {
    pub params: f64,
    pub dz: f64,
}

pub fn logistic_instance(seed: u64) -> LogisticErrors {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=8);
    let d = rng.random_range(1..=8);
    let b = rng.random_range(1..=4);
    let v = Matrix::from_vec(n, d, normals(&mut rng, n * d, 1.0 / (d as f64).sqrt())).unwrap();
    let head = LogisticHead::from_parts(v, normals(&mut rng, n, 1.0)).unwrap();
    let z = Matrix::from_vec(b, d, normals(&mut rng, b * d, 1.0)).unwrap();
    let y = random_labels(&mut rng, b, n);
    let w = random_weights(&mut rng, n);

    let (_, grads, dz) = head.backward(&z, &y, &w).unwrap();
    let num = fd_params(&head, |h| h.mean_loss(&z, &y, &w).unwrap());
    let params = max_rel_err(&grads.blocks(), &num);
    let num = fd_vec(z.as_slice(), |flat| {
        let zz = Matrix::from_vec(b, d, flat.to_vec()).unwrap();
        head.mean_loss(&zz, &y, &w).unwrap()
    });
    LogisticErrors {
        params,
        dz: max_rel_err(&[dz.as_slice()], &[num]),
    }
}

/// A random network together with its raw parameters, which the oracle
/// forward pass reads directly.
pub struct RandomNet {
    pub mlp: Mlp,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

pub fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize], activation: Activation) -> RandomNet {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in sizes.windows(2) {
        let data = normals(rng, pair[0] * pair[1], 1.0 / (pair[0] as f64).sqrt());
        weights.push(Matrix::from_vec(pair[1], pair[0], data).unwrap());
        biases.push(normals(rng, pair[1], 0.5));
    }
    let mlp = Mlp::from_parts(activation, weights.clone(), biases.clone()).unwrap();
    RandomNet { mlp, weights, biases }
}

/// Forward pass written out loop by loop; returns the output and every
/// hidden pre-activation.
pub fn oracle_forward(net: &RandomNet, activation: Activation, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut h = x.to_vec();
    let mut pre_all = Vec::new();
    let layers = net.weights.len();
    for (l, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
        let mut out = vec![0.0; w.rows()];
        for r in 0..w.rows() {
            let mut s = b[r];
            for c in 0..w.cols() {
                s += w[(r, c)] * h[c];
            }
            out[r] = s;
        }
        if l + 1 < layers {
            pre_all.extend(&out);
            for v in &mut out {
                *v = match activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                };
            }
        }
        h = out;
    }
    (h, pre_all)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MlpErrors {
    /// `∂(cᵀz)/∂θ` for a random `c`.
    pub backprop: f64,
    /// `∂ loss_total(h(X))/∂θ` through the head.
    pub composite: f64,
    /// `|mlp.forward − oracle|`.
    pub forward: f64,
}

pub fn mlp_instance(seed: u64) -> MlpErrors {
    let mut rng = rng(seed);
    let activation = if seed % 2 == 0 { Activation::Relu } else { Activation::Tanh };
    let (net, xs) = loop {
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..rng.random_range(0..=2) {
            sizes.push(rng.random_range(1..=8));
        }
        sizes.push(rng.random_range(1..=8));
        let net = random_net(&mut rng, &sizes, activation);
        let b = rng.random_range(1..=4);
        let xs: Vec<Vec<f64>> = (0..b).map(|_| normals(&mut rng, sizes[0], 1.0)).collect();
        let kinked = activation == Activation::Relu
            && xs
                .iter()
                .any(|x| oracle_forward(&net, activation, x).1.iter().any(|p| p.abs() < KINK_MARGIN));
        if !kinked {
            break (net, xs);
        }
    };
    let d = *net.mlp.layer_sizes().last().unwrap();
    let mut errs = MlpErrors::default();
    for x in &xs {
        let (z, _) = net.mlp.forward(x).unwrap();
        errs.forward = errs.forward.max(max_abs_diff(&z, &oracle_forward(&net, activation, x).0));
    }

    let c = normals(&mut rng, d, 1.0);
    let x0 = &xs[0];
    let (_, cache) = net.mlp.forward(x0).unwrap();
    let analytic = net.mlp.backward(&cache, &c).unwrap();
    let num = fd_params(&net.mlp, |m| asmlc::linalg::dot(&m.embed(x0).unwrap(), &c));
    errs.backprop = max_rel_err(&analytic.blocks(), &num);

    let n = rng.random_range(1..=4);
    let head = loop {
        let e = rng.random_range(1..=d);
        let h = random_head(&mut rng, n, d, e);
        if !near_kink(&h) && !small_gap(&h) {
            break h;
        }
    };
    let y = random_labels(&mut rng, xs.len(), n);
    let alpha = random_weights(&mut rng, n);
    let cfg = LossConfig::default();
    let x = Matrix::from_rows(&xs).unwrap();
    let objective = |m: &Mlp| head.loss_total(&m.embed_batch(&x).unwrap(), &y, &alpha, &cfg).unwrap().total;
    let z = net.mlp.embed_batch(&x).unwrap();
    let back = head.backward(&z, &y, &alpha, &cfg).unwrap();
    let mut grads = MlpGradients::zeros_like(&net.mlp);
    for (k, xk) in xs.iter().enumerate() {
        let (_, cache) = net.mlp.forward(xk).unwrap();
        net.mlp.backward_into(&cache, back.dz.row(k), 1.0, &mut grads).unwrap();
    }
    errs.composite = max_rel_err(&grads.blocks(), &fd_params(&net.mlp, objective));
    errs
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
