//! Data sets and configurations of the end-to-end scenarios.

use asmlc::data::{generate_synthetic, split, ClusterLayout, Dataset, LabelMatrix, SyntheticSpec};
use asmlc::head::OrthoPenalty;
use asmlc::mlp::Activation;
use asmlc::trainer::TrainConfig;
use rand::Rng;

use super::rng;

/// Two labels, four well-separated clusters in the plane, 100 points each.
pub fn four_clusters(seed: u64) -> (Dataset, Dataset) {
    let ds = generate_synthetic(&SyntheticSpec::new(2, 2, 100, 0.1, seed)).unwrap();
    split(&ds, 0.8, seed).unwrap()
}

/// `d = 2`, `e = 1`: one line per class and label, so the two labels' lines
/// cross at the four cluster positions.
pub fn planar_config(seed: u64, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.mlp.descriptor_dim = 2;
    cfg.mlp.activation = Activation::Tanh;
    cfg.e = 1;
    cfg.epochs = epochs;
    cfg.seed = seed;
    cfg
}

/// Training data without the `(1, 1)` combination and a test set holding only
/// fresh `(1, 1)` points. Centers are additive in the labels, so `(1, 1)` sits
/// where the two single-label offsets compose.
pub fn rare_combination(seed: u64) -> (Dataset, Dataset, Dataset) {
    let mut spec = SyntheticSpec::new(2, 8, 100, 0.1, seed);
    spec.layout = ClusterLayout::Additive;
    spec.drop_combos = vec![vec![1, 1]];
    let (train, val) = split(&generate_synthetic(&spec).unwrap(), 0.8, seed).unwrap();
    spec.sample_seed = Some(seed + 1000);
    spec.drop_combos = vec![vec![0, 0], vec![0, 1], vec![1, 0]];
    (train, val, generate_synthetic(&spec).unwrap())
}

/// Linear extractor (no hidden layer) into `d = 8` with `e = 4`.
pub fn rare_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.mlp.hidden = vec![];
    cfg.mlp.descriptor_dim = 8;
    cfg.e = 4;
    cfg.epochs = 200;
    cfg.seed = seed;
    cfg
}

/// Flips each training label independently with probability `p`; the
/// validation set stays clean.
pub fn flip_labels(ds: &Dataset, p: f64, seed: u64) -> Dataset {
    let mut rng = rng(seed);
    let rows: Vec<Vec<u8>> = ds
        .labels
        .iter_rows()
        .map(|r| r.iter().map(|&v| if rng.random::<f64>() < p { 1 - v } else { v }).collect())
        .collect();
    Dataset {
        labels: LabelMatrix::from_rows(&rows).unwrap(),
        ..ds.clone()
    }
}

/// Overlapping classes for the bandwidth sweep: wider clusters and 20% label
/// noise in training.
pub fn noisy_clusters(seed: u64) -> (Dataset, Dataset) {
    let ds = generate_synthetic(&SyntheticSpec::new(2, 2, 100, 0.5, seed)).unwrap();
    let (train, val) = split(&ds, 0.8, seed).unwrap();
    (flip_labels(&train, 0.2, 100 + seed), val)
}

pub fn bandwidth_config(seed: u64) -> TrainConfig {
    let mut cfg = planar_config(seed, 100);
    cfg.mlp.activation = Activation::Relu;
    cfg
}

/// Clean clusters with spread 1 for the feature-dimension sweep.
pub fn wide_clusters(seed: u64) -> (Dataset, Dataset) {
    let ds = generate_synthetic(&SyntheticSpec::new(2, 2, 100, 1.0, seed)).unwrap();
    split(&ds, 0.8, seed).unwrap()
}

pub fn dimension_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.mlp.descriptor_dim = 16;
    cfg.epochs = 100;
    cfg.seed = seed;
    cfg
}

/// Large learning rate and long training, where the optimizer's drift along
/// the scale symmetry of `(W, z)` is visible.
pub fn regularizer_config(seed: u64, ortho: OrthoPenalty) -> TrainConfig {
    let mut cfg = planar_config(seed, 1000);
    cfg.mlp.activation = Activation::Relu;
    cfg.adam.lr = 1e-2;
    cfg.loss.beta = 1000.0;
    cfg.loss.ortho = ortho;
    cfg
}
