//! Ranking metrics for multi-label scores: average precision, macro/micro
//! mAP and ROC AUC.
//!
//! Ties in AP are broken by original index (earlier sample ranks first), so
//! results do not depend on the sort implementation. AUC treats tied
//! positive/negative pairs as half-correct.

use serde::{Deserialize, Serialize};

use crate::data::LabelMatrix;
use crate::error::{check_len, Result};
use crate::linalg::Matrix;

fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps equal scores in index order.
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Non-interpolated average precision; `None` when there are no positives.
pub fn average_precision(scores: &[f64], truth: &[u8]) -> Result<Option<f64>> {
    check_len("truth", scores.len(), truth.len())?;
    let positives = truth.iter().filter(|&&t| t == 1).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &k) in descending_order(scores).iter().enumerate() {
        if truth[k] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(sum / positives as f64))
}

/// Area under the ROC curve as the normalized Mann–Whitney U statistic;
/// `None` unless both classes are present.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<Option<f64>> {
    check_len("truth", scores.len(), truth.len())?;
    let pos = truth.iter().filter(|&&t| t == 1).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        let mid_rank = (start + 1 + end) as f64 / 2.0;
        let tied_pos = idx[start..end].iter().filter(|&&k| truth[k] == 1).count();
        rank_sum += mid_rank * tied_pos as f64;
        start = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n)))
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

fn check_shapes(scores: &Matrix, truth: &LabelMatrix) -> Result<()> {
    check_len("truth rows", scores.rows(), truth.rows())?;
    check_len("truth columns", scores.cols(), truth.cols())
}

fn column(scores: &Matrix, i: usize) -> Vec<f64> {
    scores.iter_rows().map(|r| r[i]).collect()
}

/// Per-label AP, their mean over defined labels, and AP over all `(sample,
/// label)` pairs flattened row-major.
pub fn macro_micro_map(scores: &Matrix, truth: &LabelMatrix) -> Result<(Vec<Option<f64>>, Option<f64>, Option<f64>)> {
    check_shapes(scores, truth)?;
    let per_label = (0..scores.cols())
        .map(|i| average_precision(&column(scores, i), &truth.column(i)))
        .collect::<Result<Vec<_>>>()?;
    let flat_truth: Vec<u8> = truth.iter_rows().flatten().copied().collect();
    let micro = average_precision(scores.as_slice(), &flat_truth)?;
    let macro_map = mean_defined(&per_label);
    Ok((per_label, macro_map, micro))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// `None` for labels without positives.
    pub per_label_ap: Vec<Option<f64>>,
    pub macro_map: Option<f64>,
    pub micro_map: Option<f64>,
    /// `None` for labels with a single class.
    pub per_label_auc: Vec<Option<f64>>,
    pub mean_auc: Option<f64>,
}

impl EvalResult {
    pub fn csv_header(n: usize) -> String {
        let mut cols = vec!["macro_map".to_string(), "micro_map".into(), "mean_auc".into()];
        cols.extend((0..n).map(|i| format!("ap_{i}")));
        cols.extend((0..n).map(|i| format!("auc_{i}")));
        cols.join(",")
    }

    /// One CSV row; undefined values are empty fields.
    pub fn csv_row(&self) -> String {
        let f = |v: &Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let mut cols = vec![f(&self.macro_map), f(&self.micro_map), f(&self.mean_auc)];
        cols.extend(self.per_label_ap.iter().map(f));
        cols.extend(self.per_label_auc.iter().map(f));
        cols.join(",")
    }
}

/// All metrics for a `K×n` score matrix. Labels where a metric is undefined
/// are excluded from its average with a warning.
pub fn evaluate_scores(scores: &Matrix, truth: &LabelMatrix) -> Result<EvalResult> {
    let (per_label_ap, macro_map, micro_map) = macro_micro_map(scores, truth)?;
    let per_label_auc = (0..scores.cols())
        .map(|i| roc_auc(&column(scores, i), &truth.column(i)))
        .collect::<Result<Vec<_>>>()?;
    for (i, ap) in per_label_ap.iter().enumerate() {
        if ap.is_none() {
            log::warn!("label {i} has no positives; AP excluded from macro mAP");
        }
    }
    for (i, auc) in per_label_auc.iter().enumerate() {
        if auc.is_none() {
            log::warn!("label {i} has a single class; AUC excluded from mean AUC");
        }
    }
    Ok(EvalResult {
        macro_map,
        micro_map,
        mean_auc: mean_defined(&per_label_auc),
        per_label_ap,
        per_label_auc,
    })
}
