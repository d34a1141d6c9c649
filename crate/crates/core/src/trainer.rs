//! Joint optimization of the feature extractor and head, validation-driven
//! checkpoint selection, evaluation and hyperparameter sweeps.

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState, Params};
use crate::checkpoint::{Checkpoint, TrainedHead};
use crate::data::{inverse_occurrence_weights, Dataset, LabelMatrix};
use crate::error::{Error, Result};
use crate::head::{ClassWeights, LossBreakdown, LossConfig, SubspaceHead};
use crate::inference::{distance_scores_batch, DistanceKind, KdeModel, KdeNormalization, KnnModel, DEFAULT_KNN_K};
use crate::linalg::Matrix;
use crate::logistic::LogisticHead;
use crate::metrics::{evaluate_scores, macro_micro_map, EvalResult};
use crate::mlp::{Activation, Mlp, MlpConfig, MlpGradients};
use crate::rng::{self, Stream};

use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    #[default]
    AsMlc,
    Logistic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    #[default]
    Uniform,
    /// Inverse class occurrence in the training set.
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Kde,
    Distance,
    Knn,
    Logistic,
}

/// Hidden widths, descriptor size and activation of the extractor. The input
/// size comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLayout {
    pub hidden: Vec<usize>,
    pub descriptor_dim: usize,
    pub activation: Activation,
}

impl Default for MlpLayout {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            descriptor_dim: 32,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// Requested projection dimension; clipped to the descriptor dimension.
    pub e: usize,
    pub delta: f64,
    pub alpha_mode: AlphaMode,
    pub head_kind: HeadKind,
    pub mlp: MlpLayout,
    pub seed: u64,
    pub kde_normalization: KdeNormalization,
    /// Keep training descriptors for the kNN scorer (always on for `as-mlc`).
    pub store_descriptors: bool,
    pub knn_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            e: 32,
            delta: 0.1,
            alpha_mode: AlphaMode::Uniform,
            head_kind: HeadKind::AsMlc,
            mlp: MlpLayout::default(),
            seed: 0,
            kde_normalization: KdeNormalization::ClassConditional,
            store_descriptors: false,
            knn_k: DEFAULT_KNN_K,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        if !(self.loss.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.loss.beta)));
        }
        if !(self.loss.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.loss.eps)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("bandwidth must be positive, got {}", self.delta)));
        }
        if self.e == 0 || self.mlp.descriptor_dim == 0 {
            return Err(Error::Config("e and descriptor dimension must be positive".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("kNN neighbor count must be positive".into()));
        }
        Ok(())
    }

    /// `e` clipped to the descriptor dimension.
    pub fn effective_e(&self) -> usize {
        self.e.min(self.mlp.descriptor_dim)
    }

    pub fn mlp_config(&self, input_dim: usize) -> MlpConfig {
        let mut layer_sizes = vec![input_dim];
        layer_sizes.extend(&self.mlp.hidden);
        layer_sizes.push(self.mlp.descriptor_dim);
        MlpConfig {
            layer_sizes,
            activation: self.mlp.activation,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective on the full training set after the epoch.
    pub train_loss: f64,
    /// Loss terms for the subspace head; absent for the logistic head.
    pub breakdown: Option<LossBreakdown>,
    pub val_macro_map: Option<f64>,
    pub val_micro_map: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch with the highest validation macro mAP; among exact ties the one
    /// with the lowest training objective, then the earliest.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.and_then(|b| self.epochs.iter().find(|r| r.epoch == b))
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(crate::json::fmt_f64).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,l1,l2,l3,val_macro_map,val_micro_map\n");
        for r in &self.epochs {
            let b = r.breakdown;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                crate::json::fmt_f64(r.train_loss),
                f(b.map(|b| b.l1)),
                f(b.map(|b| b.l2)),
                f(b.map(|b| b.l3)),
                f(r.val_macro_map),
                f(r.val_micro_map),
            ));
        }
        out
    }
}

enum Head {
    Subspace(SubspaceHead),
    Logistic(LogisticHead),
}

impl Head {
    fn blocks(&self) -> Vec<&[f64]> {
        match self {
            Head::Subspace(h) => h.blocks(),
            Head::Logistic(h) => h.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Head::Subspace(h) => h.blocks_mut(),
            Head::Logistic(h) => h.blocks_mut(),
        }
    }
}

struct Snapshot {
    mlp: Mlp,
    head: TrainedHead,
    descriptors: Matrix,
}

fn check_compatible(train: &Dataset, val: &Dataset) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    if train.input_dim() != val.input_dim() || train.n_labels() != val.n_labels() {
        return Err(Error::Dimension(format!(
            "train has {} features / {} labels, validation has {} / {}",
            train.input_dim(),
            train.n_labels(),
            val.input_dim(),
            val.n_labels()
        )));
    }
    Ok(())
}

/// Full training run.
///
/// Minibatch Adam updates the extractor and head together; the separation
/// and orthonormality terms enter every step once. After each epoch the
/// validation macro mAP is measured (KDE posterior for the subspace head)
/// and the best epoch's models are returned.
pub fn train(config: &TrainConfig, train_ds: &Dataset, val_ds: &Dataset) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    check_compatible(train_ds, val_ds)?;
    if config.head_kind == HeadKind::AsMlc {
        train_ds.require_both_classes()?;
    }
    let n = train_ds.n_labels();
    let d = config.mlp.descriptor_dim;
    let e = config.effective_e();
    if e < config.e {
        log::warn!("e={} exceeds descriptor dimension {d}; clipped to {e}", config.e);
    }
    let alpha = match config.alpha_mode {
        AlphaMode::Uniform => ClassWeights::uniform(n),
        AlphaMode::Inverse => inverse_occurrence_weights(train_ds)?,
    };

    let mut mlp = Mlp::init(&config.mlp_config(train_ds.input_dim()))?;
    let mut head = match config.head_kind {
        HeadKind::AsMlc => Head::Subspace(SubspaceHead::init(n, d, e, config.seed)?),
        HeadKind::Logistic => Head::Logistic(LogisticHead::init(n, d, config.seed)?),
    };
    let block_lens: Vec<usize> = mlp
        .blocks()
        .iter()
        .chain(head.blocks().iter())
        .map(|b| b.len())
        .collect();
    let mut adam = AdamState::new(config.adam, &block_lens)?;
    let mut shuffle_rng = rng::stream(config.seed, Stream::Shuffle);

    let mut report = TrainReport::default();
    // Keyed by (validation macro mAP, training objective).
    let mut best: Option<((f64, f64), Snapshot)> = None;
    let mut order: Vec<usize> = (0..train_ds.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut zs = Vec::with_capacity(chunk.len() * d);
            let mut caches = Vec::with_capacity(chunk.len());
            for &k in chunk {
                let (z, cache) = mlp.forward(train_ds.features.row(k))?;
                zs.extend(z);
                caches.push(cache);
            }
            let batch_z = Matrix::from_vec(chunk.len(), d, zs)?;
            let batch_y = train_ds.labels.select(chunk);

            let (loss, head_grads, dz) = match &head {
                Head::Subspace(h) => {
                    let bw = h.backward(&batch_z, &batch_y, &alpha, &config.loss)?;
                    let blocks: Vec<Vec<f64>> = bw.grads.blocks().iter().map(|b| b.to_vec()).collect();
                    (bw.loss.total, blocks, bw.dz)
                }
                Head::Logistic(h) => {
                    let (l, g, dz) = h.backward(&batch_z, &batch_y, &alpha)?;
                    (l, g.blocks().iter().map(|b| b.to_vec()).collect(), dz)
                }
            };
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    state: divergence_state(loss, &mlp, &head),
                });
            }

            let mut mlp_grads = MlpGradients::zeros_like(&mlp);
            for (k, cache) in caches.iter().enumerate() {
                mlp.backward_into(cache, dz.row(k), 1.0, &mut mlp_grads)?;
            }
            let grads: Vec<&[f64]> = mlp_grads
                .blocks()
                .into_iter()
                .chain(head_grads.iter().map(Vec::as_slice))
                .collect();
            let params: Vec<&mut [f64]> = mlp.blocks_mut().into_iter().chain(head.blocks_mut()).collect();
            adam.step_blocks(params, &grads)?;
        }

        let train_z = mlp.embed_batch(&train_ds.features)?;
        let val_z = mlp.embed_batch(&val_ds.features)?;
        let (train_loss, breakdown, trained, val_scores) = match &head {
            Head::Subspace(h) => {
                let b = h.loss_total(&train_z, &train_ds.labels, &alpha, &config.loss)?;
                let kde = KdeModel::fit(h, &train_z, &train_ds.labels, config.delta, config.kde_normalization)?;
                let scores = kde.posterior_batch(h, &val_z)?;
                (b.total, Some(b), TrainedHead::Subspace { head: h.clone(), kde }, scores)
            }
            Head::Logistic(h) => {
                let l = h.mean_loss(&train_z, &train_ds.labels, &alpha)?;
                let mut scores = Vec::with_capacity(val_z.rows() * n);
                for z in val_z.iter_rows() {
                    scores.extend(h.predict(z)?);
                }
                (l, None, TrainedHead::Logistic(h.clone()), Matrix::from_vec(val_z.rows(), n, scores)?)
            }
        };
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: usize::MAX,
                state: divergence_state(train_loss, &mlp, &head),
            });
        }
        let (_, val_macro, val_micro) = macro_micro_map(&val_scores, &val_ds.labels)?;
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6}, val macro mAP {}",
            val_macro.map_or("undefined".to_string(), |m| format!("{m:.4}"))
        );
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            breakdown,
            val_macro_map: val_macro,
            val_micro_map: val_micro,
        });
        if let Some(m) = val_macro {
            let better = match &best {
                None => true,
                Some((b, _)) => m > b.0 || (m == b.0 && train_loss < b.1),
            };
            if better {
                report.best_epoch = Some(epoch);
                best = Some((
                    (m, train_loss),
                    Snapshot {
                        mlp: mlp.clone(),
                        head: trained,
                        descriptors: train_z,
                    },
                ));
            }
        }
    }

    let Some((_, snap)) = best else {
        return Err(Error::NoCheckpointSelected);
    };
    let knn = if config.head_kind == HeadKind::AsMlc || config.store_descriptors {
        Some(KnnModel::fit(snap.descriptors, train_ds.labels.clone(), config.knn_k)?)
    } else {
        None
    };
    let checkpoint = Checkpoint {
        config: config.clone(),
        feature_names: train_ds.feature_names.clone(),
        label_names: train_ds.label_names.clone(),
        alpha,
        mlp: snap.mlp,
        head: snap.head,
        knn,
    };
    Ok((checkpoint, report))
}

fn divergence_state(loss: f64, mlp: &Mlp, head: &Head) -> String {
    let max_abs = |blocks: Vec<&[f64]>| -> f64 {
        blocks
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0_f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY })
    };
    let head_state = match head {
        Head::Subspace(h) => format!(
            "subspace head mean row norm {:.6e}, max |param| {:.6e}",
            h.mean_row_norm(),
            max_abs(h.blocks())
        ),
        Head::Logistic(h) => format!("logistic head max |param| {:.6e}", max_abs(h.blocks())),
    };
    format!("loss {loss}, extractor max |param| {:.6e}, {head_state}", max_abs(mlp.blocks()))
}

/// Options for scoring with a checkpoint.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreOptions {
    /// Replaces the stored KDE bandwidth.
    pub delta: Option<f64>,
    pub distance: DistanceKind,
}

/// `K×n` probabilities for every row of `features`.
pub fn predict(checkpoint: &Checkpoint, features: &Matrix, mode: EvalMode, opts: ScoreOptions) -> Result<Matrix> {
    if features.cols() != checkpoint.mlp.input_dim() {
        return Err(Error::Dimension(format!(
            "data has {} features, checkpoint expects {}",
            features.cols(),
            checkpoint.mlp.input_dim()
        )));
    }
    let z = checkpoint.mlp.embed_batch(features)?;
    match (mode, &checkpoint.head) {
        (EvalMode::Kde, TrainedHead::Subspace { head, kde }) => match opts.delta {
            Some(delta) => kde.with_delta(delta)?.posterior_batch(head, &z),
            None => kde.posterior_batch(head, &z),
        },
        (EvalMode::Distance, TrainedHead::Subspace { head, .. }) => distance_scores_batch(head, &z, opts.distance),
        (EvalMode::Logistic, TrainedHead::Logistic(head)) => {
            let mut out = Vec::with_capacity(z.rows() * head.n());
            for row in z.iter_rows() {
                out.extend(head.predict(row)?);
            }
            Matrix::from_vec(z.rows(), head.n(), out)
        }
        (EvalMode::Knn, _) => match &checkpoint.knn {
            Some(knn) => knn.predict_batch(&z),
            None => Err(Error::IncompatibleMode(
                "checkpoint has no stored training descriptors for kNN".into(),
            )),
        },
        (mode, head) => Err(Error::IncompatibleMode(format!(
            "mode {mode:?} cannot be used with a {} checkpoint",
            head.kind_name()
        ))),
    }
}

pub fn evaluate(checkpoint: &Checkpoint, ds: &Dataset, mode: EvalMode, opts: ScoreOptions) -> Result<EvalResult> {
    if ds.n_labels() != checkpoint.label_names.len() {
        return Err(Error::Dimension(format!(
            "data has {} labels, checkpoint has {}",
            ds.n_labels(),
            checkpoint.label_names.len()
        )));
    }
    let scores = predict(checkpoint, &ds.features, mode, opts)?;
    evaluate_scores(&scores, &ds.labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub e: usize,
    pub macro_map: Option<f64>,
    pub micro_map: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Set when the cell failed; the sweep carries on.
    pub error: Option<String>,
}

fn dedup_f64(xs: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &x in xs {
        if !out.iter().any(|y| y.to_bits() == x.to_bits()) {
            out.push(x);
        }
    }
    out
}

fn dedup_usize(xs: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    for &x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// One training run per `(δ, e)` grid point, reporting the selected epoch's
/// validation mAP. Every cell starts from `config.seed`. Rows follow grid
/// order (δ outer, e inner) regardless of `jobs`.
pub fn sweep(
    config: &TrainConfig,
    deltas: &[f64],
    es: &[usize],
    train_ds: &Dataset,
    val_ds: &Dataset,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if deltas.is_empty() || es.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    let cells: Vec<(f64, usize)> = dedup_f64(deltas)
        .into_iter()
        .flat_map(|d| dedup_usize(es).into_iter().map(move |e| (d, e)))
        .collect();
    let run = |&(delta, e): &(f64, usize)| -> SweepRow {
        let cfg = TrainConfig {
            delta,
            e,
            ..config.clone()
        };
        match train(&cfg, train_ds, val_ds) {
            Ok((_, report)) => {
                let best = report.best();
                SweepRow {
                    delta,
                    e,
                    macro_map: best.and_then(|b| b.val_macro_map),
                    micro_map: best.and_then(|b| b.val_micro_map),
                    best_epoch: report.best_epoch,
                    error: None,
                }
            }
            Err(err) => {
                log::warn!("sweep cell delta={delta}, e={e} failed: {err}");
                SweepRow {
                    delta,
                    e,
                    macro_map: None,
                    micro_map: None,
                    best_epoch: None,
                    error: Some(err.to_string()),
                }
            }
        }
    };
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(run).collect()))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut out = String::from("delta,e,macro_map,micro_map,best_epoch,status\n");
    for r in rows {
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => format!("\"failed: {}\"", e.replace('"', "'")),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.delta,
            r.e,
            f(r.macro_map),
            f(r.micro_map),
            r.best_epoch.map(|b| b.to_string()).unwrap_or_default(),
            status
        ));
    }
    out
}

/// Per-sample descriptor and, for the subspace head, `Wᵢz + bᵢⱼ` for every
/// label and class, as CSV for plotting.
pub fn export_embeddings(checkpoint: &Checkpoint, ds: &Dataset) -> Result<String> {
    if ds.input_dim() != checkpoint.mlp.input_dim() {
        return Err(Error::Dimension(format!(
            "data has {} features, checkpoint expects {}",
            ds.input_dim(),
            checkpoint.mlp.input_dim()
        )));
    }
    let z = checkpoint.mlp.embed_batch(&ds.features)?;
    let mut header: Vec<String> = (0..z.cols()).map(|j| format!("z{j}")).collect();
    let subspace = match &checkpoint.head {
        TrainedHead::Subspace { head, .. } => Some(head),
        TrainedHead::Logistic(_) => None,
    };
    if let Some(h) = subspace {
        for i in 0..h.n() {
            for class in 0..2 {
                header.extend((0..h.e()).map(|c| format!("proj{i}_{class}_{c}")));
            }
        }
    }
    header.extend(ds.label_names.iter().map(|l| format!("{}{l}", crate::data::LABEL_PREFIX)));
    let mut out = header.join(",");
    out.push('\n');
    for (k, zk) in z.iter_rows().enumerate() {
        let mut cols: Vec<String> = zk.iter().map(|v| format!("{v:?}")).collect();
        if let Some(h) = subspace {
            for i in 0..h.n() {
                for class in 0..2u8 {
                    cols.extend(h.project(i, zk, Some(class))?.iter().map(|v| format!("{v:?}")));
                }
            }
        }
        cols.extend(ds.labels.row(k).iter().map(|v| v.to_string()));
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Fraction of `(sample, label)` pairs whose descriptor is strictly closer to
/// the subspace of its own class than to the other one.
pub fn correct_subspace_fraction(head: &SubspaceHead, descriptors: &Matrix, labels: &LabelMatrix) -> Result<f64> {
    let mut correct = 0usize;
    for (z, y) in descriptors.iter_rows().zip(labels.iter_rows()) {
        for (i, &yi) in y.iter().enumerate() {
            let (d0, d1) = head.distances(i, z)?;
            if (yi == 0 && d0 < d1) || (yi == 1 && d1 < d0) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / (descriptors.rows() * head.n()) as f64)
}
