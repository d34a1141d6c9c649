//! Trained model bundle and its on-disk layout.
//!
//! A checkpoint directory holds:
//! - `config.json`: the training configuration plus feature/label names and class weights
//! - `mlp.json`: the extractor
//! - `head.json`: subspace head `{"n","d","e","W","b0","b1"}` or logistic head `{"n","d","V","v"}`
//! - `kde.json`: the fitted KDE (subspace head only)
//! - `knn.json`: stored training descriptors, when kept
//!
//! All files are written atomically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{ClassWeights, SubspaceHead};
use crate::inference::{KdeModel, KnnModel};
use crate::json::{read_json, write_atomic, write_json};
use crate::logistic::LogisticHead;
use crate::mlp::Mlp;
use crate::trainer::{HeadKind, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedHead {
    Subspace { head: SubspaceHead, kde: KdeModel },
    Logistic(LogisticHead),
}

impl TrainedHead {
    pub fn kind_name(&self) -> &'static str {
        match self {
            TrainedHead::Subspace { .. } => "as-mlc",
            TrainedHead::Logistic(_) => "logistic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
    pub alpha: ClassWeights,
    pub mlp: Mlp,
    pub head: TrainedHead,
    pub knn: Option<KnnModel>,
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    config: TrainConfig,
    feature_names: Vec<String>,
    label_names: Vec<String>,
    alpha: ClassWeights,
}

pub const CONFIG_FILE: &str = "config.json";
pub const MLP_FILE: &str = "mlp.json";
pub const HEAD_FILE: &str = "head.json";
pub const KDE_FILE: &str = "kde.json";
pub const KNN_FILE: &str = "knn.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CSV_FILE: &str = "report.csv";

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(
            &dir.join(CONFIG_FILE),
            &ConfigFile {
                config: self.config.clone(),
                feature_names: self.feature_names.clone(),
                label_names: self.label_names.clone(),
                alpha: self.alpha.clone(),
            },
        )?;
        write_atomic(&dir.join(MLP_FILE), self.mlp.to_json()?.as_bytes())?;
        match &self.head {
            TrainedHead::Subspace { head, kde } => {
                write_json(&dir.join(HEAD_FILE), head)?;
                write_json(&dir.join(KDE_FILE), kde)?;
            }
            TrainedHead::Logistic(head) => write_json(&dir.join(HEAD_FILE), head)?,
        }
        if let Some(knn) = &self.knn {
            write_json(&dir.join(KNN_FILE), knn)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg: ConfigFile = read_json(&dir.join(CONFIG_FILE))?;
        let mlp_path = dir.join(MLP_FILE);
        let mlp = Mlp::from_json(&fs::read_to_string(&mlp_path).map_err(|e| Error::io(&mlp_path, e))?)?;
        let head = match cfg.config.head_kind {
            HeadKind::AsMlc => {
                let head: SubspaceHead = read_json(&dir.join(HEAD_FILE))?;
                let kde: KdeModel = read_json(&dir.join(KDE_FILE))?;
                kde.validate()?;
                if kde.n != head.n() || kde.e != head.e() {
                    return Err(Error::Dimension("kde.json does not match head.json".into()));
                }
                TrainedHead::Subspace { head, kde }
            }
            HeadKind::Logistic => TrainedHead::Logistic(read_json(&dir.join(HEAD_FILE))?),
        };
        let knn_path = dir.join(KNN_FILE);
        let knn = if knn_path.exists() {
            Some(read_json(&knn_path)?)
        } else {
            None
        };
        let (n, d) = match &head {
            TrainedHead::Subspace { head, .. } => (head.n(), head.d()),
            TrainedHead::Logistic(h) => (h.n(), h.d()),
        };
        if d != mlp.output_dim() || n != cfg.label_names.len() {
            return Err(Error::Dimension("head does not match extractor or label names".into()));
        }
        Ok(Self {
            config: cfg.config,
            feature_names: cfg.feature_names,
            label_names: cfg.label_names,
            alpha: cfg.alpha,
            mlp,
            head,
            knn,
        })
    }
}

impl TrainReport {
    /// Writes `report.json` and the per-epoch `report.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(REPORT_FILE), self)?;
        write_atomic(&dir.join(REPORT_CSV_FILE), self.to_csv().as_bytes())
    }
}
