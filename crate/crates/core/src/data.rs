//! Datasets: synthetic generation, CSV ingestion, splitting and class weights.
//!
//! CSV layout is a header `f0,...,fM,label:A,label:B,...` followed by one row
//! per sample. Feature columns come first; every column whose name starts
//! with `label:` is a binary label.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::head::ClassWeights;
use crate::linalg::{dist_sq, Matrix};
use crate::rng::{self, Stream};

pub const LABEL_PREFIX: &str = "label:";

/// Half-width of the box cluster centers are drawn from.
pub const CENTER_HALF_WIDTH: f64 = 4.0;

const MAX_CENTER_ATTEMPTS: usize = 10_000;

/// Row-major `K×n` matrix of `{0,1}` labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl LabelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_len("label row", cols, row.len())?;
            if let Some(v) = row.iter().find(|&&v| v > 1) {
                return Err(Error::Precondition(format!("label value {v} is not 0 or 1")));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[u8] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> u8 {
        self.data[k * self.cols + i]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[u8]> {
        (0..self.rows).map(move |k| self.row(k))
    }

    /// Number of samples with label `i` equal to `class`.
    pub fn count(&self, i: usize, class: u8) -> usize {
        self.iter_rows().filter(|r| r[i] == class).count()
    }

    /// Column `i` as a vector.
    pub fn column(&self, i: usize) -> Vec<u8> {
        self.iter_rows().map(|r| r[i]).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &k in idx {
            data.extend_from_slice(self.row(k));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Features `X` (`K×input_dim`) with binary labels `Y` (`K×n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
    pub features: Matrix,
    pub labels: LabelMatrix,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        label_names: Vec<String>,
        features: Matrix,
        labels: LabelMatrix,
    ) -> Result<Self> {
        check_len("feature names", features.cols(), feature_names.len())?;
        check_len("label names", labels.cols(), label_names.len())?;
        check_len("label rows", features.rows(), labels.rows())?;
        Ok(Self {
            feature_names,
            label_names,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut feats = Vec::with_capacity(idx.len() * self.input_dim());
        for &k in idx {
            feats.extend_from_slice(self.features.row(k));
        }
        Self {
            feature_names: self.feature_names.clone(),
            label_names: self.label_names.clone(),
            features: Matrix::from_vec(idx.len(), self.input_dim(), feats)
                .expect("subset keeps row width"),
            labels: self.labels.select(idx),
        }
    }

    /// Fails with the first label that lacks a class.
    pub fn require_both_classes(&self) -> Result<()> {
        for i in 0..self.n_labels() {
            for class in [0u8, 1] {
                if self.labels.count(i, class) == 0 {
                    return Err(Error::EmptyClass {
                        label: i,
                        name: self.label_names[i].clone(),
                        class,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_csv(&text)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::json::write_atomic(path, self.to_csv_string()?.as_bytes())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = self
            .feature_names
            .iter()
            .cloned()
            .chain(self.label_names.iter().map(|l| format!("{LABEL_PREFIX}{l}")));
        w.write_record(header).map_err(csv_write_err)?;
        for k in 0..self.len() {
            let rec = self
                .features
                .row(k)
                .iter()
                .map(|v| format!("{v:?}"))
                .chain(self.labels.row(k).iter().map(|v| v.to_string()));
            w.write_record(rec).map_err(csv_write_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Config(format!("csv writer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        crate::json::write_json(path, &DatasetRepr::from(self))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let r: DatasetRepr = serde_json::from_str(s)?;
        Dataset::new(
            r.feature_names,
            r.label_names,
            Matrix::from_rows(&r.features)?,
            LabelMatrix::from_rows(&r.labels)?,
        )
    }
}

fn csv_write_err(e: csv::Error) -> Error {
    Error::Config(format!("csv writer: {e}"))
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    feature_names: Vec<String>,
    label_names: Vec<String>,
    features: Vec<Vec<f64>>,
    labels: Vec<Vec<u8>>,
}

impl From<&Dataset> for DatasetRepr {
    fn from(ds: &Dataset) -> Self {
        Self {
            feature_names: ds.feature_names.clone(),
            label_names: ds.label_names.clone(),
            features: ds.features.iter_rows().map(<[f64]>::to_vec).collect(),
            labels: ds.labels.iter_rows().map(<[u8]>::to_vec).collect(),
        }
    }
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::NoData),
        Some(r) => r.map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?,
    };

    let mut feature_names = Vec::new();
    let mut label_names = Vec::new();
    for name in header.iter() {
        if let Some(label) = name.strip_prefix(LABEL_PREFIX) {
            label_names.push(label.to_string());
        } else if label_names.is_empty() {
            feature_names.push(name.to_string());
        } else {
            return Err(Error::Parse {
                line: 1,
                msg: format!("feature column {name:?} after label columns"),
            });
        }
    }
    if label_names.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: format!("no columns prefixed {LABEL_PREFIX:?}"),
        });
    }
    let width = feature_names.len() + label_names.len();

    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for rec in records {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (c, field) in rec.iter().enumerate() {
            let field = field.trim();
            if c < feature_names.len() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    msg: format!("column {}: {field:?} is not a number", header.get(c).unwrap_or("")),
                })?;
                feats.push(v);
            } else {
                let v = match field {
                    "0" => 0u8,
                    "1" => 1u8,
                    other => {
                        return Err(Error::Parse {
                            line,
                            msg: format!(
                                "column {}: label value {other:?} is not 0 or 1",
                                header.get(c).unwrap_or("")
                            ),
                        })
                    }
                };
                labels.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::NoData);
    }
    Dataset::new(
        feature_names.clone(),
        label_names.clone(),
        Matrix::from_vec(rows, feature_names.len(), feats)?,
        LabelMatrix {
            rows,
            cols: label_names.len(),
            data: labels,
        },
    )
}

/// How cluster centers relate to the label combination.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClusterLayout {
    /// Independent random center per combination.
    #[default]
    Random,
    /// Center is `Σᵢ yᵢ·vᵢ` for random per-label offsets `vᵢ`, so a combination
    /// absent from training still sits where its labels compose.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub input_dim: usize,
    pub samples_per_combo: usize,
    pub cluster_spread: f64,
    pub seed: u64,
    /// Seed for the sample noise; defaults to `seed`. Lets a test set share
    /// the training set's centers while drawing fresh points.
    pub sample_seed: Option<u64>,
    /// Label combinations that get no samples, e.g. `[[1, 1]]`.
    pub drop_combos: Vec<Vec<u8>>,
    pub layout: ClusterLayout,
}

impl SyntheticSpec {
    pub fn new(n: usize, input_dim: usize, samples_per_combo: usize, cluster_spread: f64, seed: u64) -> Self {
        Self {
            n,
            input_dim,
            samples_per_combo,
            cluster_spread,
            seed,
            sample_seed: None,
            drop_combos: Vec::new(),
            layout: ClusterLayout::Random,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > 16 {
            return Err(Error::Spec(format!("label count must be in 1..=16, got {}", self.n)));
        }
        if self.input_dim == 0 {
            return Err(Error::Spec("input dimension must be positive".into()));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::Spec(format!(
                "cluster spread must be positive, got {}",
                self.cluster_spread
            )));
        }
        for c in &self.drop_combos {
            if c.len() != self.n || c.iter().any(|&v| v > 1) {
                return Err(Error::Spec(format!(
                    "dropped combination {c:?} is not a {}-bit label vector",
                    self.n
                )));
            }
        }
        Ok(())
    }
}

/// Parses a combination written as a bit string, label 0 first: `"10"` is `y = (1, 0)`.
pub fn parse_combo(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            _ => Err(Error::Spec(format!("combination {s:?} must be a string of 0/1"))),
        })
        .collect()
}

/// Label vector of combination index `c`: label `i` is bit `i`.
pub fn combo_labels(c: usize, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((c >> i) & 1) as u8).collect()
}

fn draw_point(rng: &mut rng::Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.random_range(-CENTER_HALF_WIDTH..=CENTER_HALF_WIDTH))
        .collect()
}

fn centers(spec: &SyntheticSpec) -> Result<Vec<Vec<f64>>> {
    let combos = 1usize << spec.n;
    let min_sq = (4.0 * spec.cluster_spread).powi(2);
    let mut rng = rng::stream(spec.seed, Stream::SyntheticCenters);
    let fail = || {
        Error::Spec(format!(
            "could not place {combos} centers at least {} apart in {} dimensions; \
             use a larger dimension or a smaller spread",
            4.0 * spec.cluster_spread,
            spec.input_dim
        ))
    };
    match spec.layout {
        ClusterLayout::Random => {
            let mut out: Vec<Vec<f64>> = Vec::with_capacity(combos);
            for _ in 0..combos {
                let mut placed = false;
                for _ in 0..MAX_CENTER_ATTEMPTS {
                    let cand = draw_point(&mut rng, spec.input_dim);
                    if out.iter().all(|c| dist_sq(c, &cand) >= min_sq) {
                        out.push(cand);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(fail());
                }
            }
            Ok(out)
        }
        ClusterLayout::Additive => {
            for _ in 0..MAX_CENTER_ATTEMPTS {
                let offsets: Vec<Vec<f64>> =
                    (0..spec.n).map(|_| draw_point(&mut rng, spec.input_dim)).collect();
                let out: Vec<Vec<f64>> = (0..combos)
                    .map(|c| {
                        let mut x = vec![0.0; spec.input_dim];
                        for (i, v) in offsets.iter().enumerate() {
                            if (c >> i) & 1 == 1 {
                                crate::linalg::axpy(1.0, v, &mut x);
                            }
                        }
                        x
                    })
                    .collect();
                let ok = (0..combos).all(|a| (a + 1..combos).all(|b| dist_sq(&out[a], &out[b]) >= min_sq));
                if ok {
                    return Ok(out);
                }
            }
            Err(fail())
        }
    }
}

/// One isotropic Gaussian cluster per label combination.
///
/// Rows are grouped by combination in increasing combination index.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let centers = centers(spec)?;
    let mut rng = rng::stream(spec.sample_seed.unwrap_or(spec.seed), Stream::SyntheticNoise);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        let y = combo_labels(c, spec.n);
        // Noise is drawn for dropped combinations too so the other clusters
        // do not depend on which combinations are dropped.
        let keep = !spec.drop_combos.contains(&y);
        for _ in 0..spec.samples_per_combo {
            let point: Vec<f64> = center
                .iter()
                .map(|&m| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    m + spec.cluster_spread * g
                })
                .collect();
            if keep {
                feats.extend(point);
                labels.extend_from_slice(&y);
            }
        }
    }
    let rows = labels.len() / spec.n;
    Dataset::new(
        (0..spec.input_dim).map(|j| format!("f{j}")).collect(),
        (0..spec.n).map(|i| format!("y{i}")).collect(),
        Matrix::from_vec(rows, spec.input_dim, feats)?,
        LabelMatrix {
            rows,
            cols: spec.n,
            data: labels,
        },
    )
}

/// Shuffled split into `(train, val)` with `round(K·train_frac)` training rows.
///
/// Each part keeps the original relative row order.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1), got {train_frac}"
        )));
    }
    let k = ds.len();
    let n_train = (k as f64 * train_frac).round() as usize;
    if n_train == 0 || n_train == k {
        return Err(Error::Config(format!(
            "split of {k} rows at fraction {train_frac} leaves an empty part"
        )));
    }
    let mut idx: Vec<usize> = (0..k).collect();
    idx.shuffle(&mut rng::stream(seed, Stream::Split));
    let (a, b) = idx.split_at_mut(n_train);
    a.sort_unstable();
    b.sort_unstable();
    Ok((ds.subset(a), ds.subset(b)))
}

/// `α[i][j] ∝ K / count(yᵢ = j)`, normalized so the mean weight is 1.
pub fn inverse_occurrence_weights(ds: &Dataset) -> Result<ClassWeights> {
    ds.require_both_classes()?;
    let k = ds.len() as f64;
    let raw: Vec<[f64; 2]> = (0..ds.n_labels())
        .map(|i| {
            [
                k / ds.labels.count(i, 0) as f64,
                k / ds.labels.count(i, 1) as f64,
            ]
        })
        .collect();
    let mean = raw.iter().flatten().sum::<f64>() / (2 * raw.len()) as f64;
    ClassWeights::new(raw.iter().map(|[a, b]| [a / mean, b / mean]).collect())
}
