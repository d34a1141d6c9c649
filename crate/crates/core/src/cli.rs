//! `asmlc` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors. Results
//! go to stdout or `--out`; diagnostics go to stderr.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::data::{generate_synthetic, parse_combo, split, ClusterLayout, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::head::OrthoPenalty;
use crate::inference::{DistanceKind, KdeNormalization, DEFAULT_KNN_K};
use crate::json::{self, write_atomic};
use crate::linalg::Matrix;
use crate::mlp::Activation;
use crate::trainer::{self, AlphaMode, EvalMode, HeadKind, MlpLayout, ScoreOptions, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "asmlc", version, about = "Affine-subspace multi-label classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a clustered synthetic multi-label dataset as CSV.
    Synth(SynthArgs),
    /// Train a feature extractor and head; writes a checkpoint directory.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint and print metrics as JSON.
    Eval(EvalArgs),
    /// Write per-sample label probabilities as CSV.
    Predict(PredictArgs),
    /// Train over a (delta, e) grid and write validation mAP per cell as CSV.
    Sweep(SweepArgs),
    /// Write descriptors, per-label projections and labels as CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of labels.
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Input dimension.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Samples per label combination.
    #[arg(long, default_value_t = 100)]
    per_combo: usize,
    /// Standard deviation of each cluster.
    #[arg(long, default_value_t = 0.1)]
    spread: f64,
    /// Combinations to leave out, as bit strings (label 0 first), e.g. `11`.
    #[arg(long, value_delimiter = ',')]
    drop_combos: Vec<String>,
    #[arg(long, value_enum, default_value_t = ClusterLayout::Random)]
    layout: ClusterLayout,
    /// Seed for cluster centers (and samples unless --sample-seed is given).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    sample_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = HeadKind::AsMlc)]
    head: HeadKind,
    /// Hyperplanes per subspace; clipped to --dim.
    #[arg(long, default_value_t = 32)]
    e: usize,
    #[arg(long, default_value_t = 5.0)]
    beta: f64,
    #[arg(long, default_value_t = crate::head::DEFAULT_EPS)]
    eps: f64,
    /// KDE bandwidth.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = AlphaMode::Uniform)]
    alpha: AlphaMode,
    #[arg(long, value_enum, default_value_t = OrthoPenalty::Trace)]
    ortho: OrthoPenalty,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hidden layer widths of the extractor.
    #[arg(long, value_delimiter = ',', default_values_t = [32, 32])]
    hidden: Vec<usize>,
    /// Descriptor dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, value_enum, default_value_t = Activation::Relu)]
    activation: Activation,
    /// Average each class likelihood over all training points instead of the
    /// points of that class.
    #[arg(long)]
    kde_all_points: bool,
    /// Keep training descriptors for kNN scoring with a logistic head.
    #[arg(long)]
    store_descriptors: bool,
    #[arg(long, default_value_t = DEFAULT_KNN_K)]
    knn_k: usize,
}

impl ModelArgs {
    fn config(&self) -> TrainConfig {
        let mut cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            e: self.e,
            delta: self.delta,
            alpha_mode: self.alpha,
            head_kind: self.head,
            mlp: MlpLayout {
                hidden: self.hidden.clone(),
                descriptor_dim: self.dim,
                activation: self.activation,
            },
            seed: self.seed,
            kde_normalization: if self.kde_all_points {
                KdeNormalization::AllPoints
            } else {
                KdeNormalization::ClassConditional
            },
            store_descriptors: self.store_descriptors,
            knn_k: self.knn_k,
            ..TrainConfig::default()
        };
        cfg.adam.lr = self.lr;
        cfg.loss.beta = self.beta;
        cfg.loss.eps = self.eps;
        cfg.loss.ortho = self.ortho;
        cfg
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Training CSV (`label:` prefixed columns are labels).
    #[arg(long)]
    data: PathBuf,
    /// Fraction of rows held out for checkpoint selection.
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
}

impl DataArgs {
    fn load_split(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let ds = Dataset::load_csv(&self.data)?;
        split(&ds, 1.0 - self.val_frac, seed)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMode::Kde)]
    mode: EvalMode,
    /// Override the stored KDE bandwidth.
    #[arg(long)]
    delta: Option<f64>,
    /// Distance form for --mode distance.
    #[arg(long, value_enum, default_value_t = DistanceKind::Squared)]
    distance: DistanceKind,
}

impl ScoreArgs {
    fn options(&self) -> ScoreOptions {
        ScoreOptions {
            delta: self.delta,
            distance: self.distance,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    score: ScoreArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    score: ScoreArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Bandwidths to try.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    deltas: Vec<f64>,
    /// Subspace dimensions to try.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    es: Vec<usize>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => {
            let (checkpoint, ds) = load_scoring(&a.score)?;
            let result = trainer::evaluate(&checkpoint, &ds, a.score.mode, a.score.options())?;
            print!("{}", json::to_string(&result)?);
            Ok(())
        }
        Command::Predict(a) => {
            let (checkpoint, ds) = load_scoring(&a.score)?;
            let scores = trainer::predict(&checkpoint, &ds.features, a.score.mode, a.score.options())?;
            write_atomic(&a.out, scores_csv(&checkpoint.label_names, &scores)?.as_bytes())
        }
        Command::Sweep(a) => sweep(a),
        Command::ExportEmbeddings(a) => {
            let checkpoint = Checkpoint::load(&a.checkpoint)?;
            let ds = Dataset::load_csv(&a.data)?;
            write_atomic(&a.out, trainer::export_embeddings(&checkpoint, &ds)?.as_bytes())
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let drop_combos = a.drop_combos.iter().map(|c| parse_combo(c)).collect::<Result<Vec<_>>>()?;
    let spec = SyntheticSpec {
        sample_seed: a.sample_seed,
        drop_combos,
        layout: a.layout,
        ..SyntheticSpec::new(a.n, a.dim, a.per_combo, a.spread, a.seed)
    };
    generate_synthetic(&spec)?.save_csv(&a.out)
}

fn train(a: TrainArgs) -> Result<()> {
    let config = a.model.config();
    let (train_ds, val_ds) = a.data.load_split(config.seed)?;
    let (checkpoint, report) = trainer::train(&config, &train_ds, &val_ds)?;
    checkpoint.save(&a.out)?;
    report.save(&a.out)?;
    let best = report.best().ok_or(Error::NoCheckpointSelected)?;
    print!("{}", json::to_string(best)?);
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let config = a.model.config();
    let (train_ds, val_ds) = a.data.load_split(config.seed)?;
    let rows = trainer::sweep(&config, &a.deltas, &a.es, &train_ds, &val_ds, a.jobs)?;
    let csv = trainer::sweep_csv(&rows);
    match &a.out {
        Some(path) => write_atomic(path, csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn load_scoring(a: &ScoreArgs) -> Result<(Checkpoint, Dataset)> {
    Ok((Checkpoint::load(&a.checkpoint)?, Dataset::load_csv(&a.data)?))
}

fn scores_csv(label_names: &[String], scores: &Matrix) -> Result<String> {
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(label_names).map_err(csv_err)?;
    for row in scores.iter_rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields is UTF-8"))
}
