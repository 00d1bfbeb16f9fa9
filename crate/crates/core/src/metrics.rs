//! Evaluation metrics over held-out entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::uq::Index;

/// Root mean squared difference over `idx`.
pub fn rmse(x: &DenseMatrix, xhat: &DenseMatrix, idx: &[Index]) -> Result<f64> {
    if x.dim() != xhat.dim() {
        return Err(Error::Shape(format!("X is {:?} but Xhat is {:?}", x.dim(), xhat.dim())));
    }
    if idx.is_empty() {
        return Err(Error::Input("rmse over an empty index set".into()));
    }
    let sse: f64 = idx.iter().map(|&ij| (x[ij] - xhat[ij]).powi(2)).sum();
    Ok((sse / idx.len() as f64).sqrt())
}

/// RMSE over the entries of `idx` not flagged in `abstained`, which runs
/// parallel to `idx`. `None` when every entry was abstained.
pub fn rmse_non_abstained(
    x: &DenseMatrix,
    xhat: &DenseMatrix,
    idx: &[Index],
    abstained: &[bool],
) -> Result<Option<f64>> {
    if abstained.len() != idx.len() {
        return Err(Error::Shape(format!(
            "{} abstention flags for {} indices",
            abstained.len(),
            idx.len()
        )));
    }
    let kept: Vec<Index> = idx
        .iter()
        .zip(abstained)
        .filter(|(_, &a)| !a)
        .map(|(&ij, _)| ij)
        .collect();
    if kept.is_empty() {
        return Ok(None);
    }
    rmse(x, xhat, &kept).map(Some)
}

fn check_scored(labels: &[bool], scores: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    if labels.len() != scores.len() {
        return Err(Error::Shape(format!("{} labels for {} scores", labels.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("scores contain NaN".into()));
    }
    match weights {
        None => Ok(vec![1.0; labels.len()]),
        Some(w) if w.len() != labels.len() => {
            Err(Error::Shape(format!("{} weights for {} labels", w.len(), labels.len())))
        }
        Some(w) if w.iter().any(|v| !v.is_finite() || *v < 0.0) => {
            Err(Error::Input("weights must be finite and non-negative".into()))
        }
        Some(w) => {
            // Both AUCs are scale-free in the weights; rescaling by the
            // maximum makes equal weights reproduce the unweighted sums bit for bit.
            let top = w.iter().copied().fold(0.0, f64::max);
            if top == 0.0 {
                return Ok(w.to_vec());
            }
            Ok(w.iter().map(|v| v / top).collect())
        }
    }
}

/// Weighted (tp, fp) totals per distinct score, from the highest score down.
fn tie_blocks(labels: &[bool], scores: &[f64], weights: &[f64]) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks: Vec<(f64, f64)> = Vec::new();
    let mut last = f64::NAN;
    for i in order {
        if scores[i] != last {
            blocks.push((0.0, 0.0));
            last = scores[i];
        }
        let block = blocks.last_mut().expect("block pushed above");
        if labels[i] {
            block.0 += weights[i];
        } else {
            block.1 += weights[i];
        }
    }
    blocks
}

/// Area under the weighted ROC curve, trapezoidal over tie blocks.
pub fn roc_auc(labels: &[bool], scores: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    let w = check_scored(labels, scores, weights)?;
    let blocks = tie_blocks(labels, scores, &w);
    let pos: f64 = blocks.iter().map(|b| b.0).sum();
    let neg: f64 = blocks.iter().map(|b| b.1).sum();
    if pos <= 0.0 || neg <= 0.0 {
        return Err(Error::Input("roc_auc needs positive and negative labels with weight".into()));
    }
    let mut area = 0.0;
    let mut tp = 0.0;
    for (btp, bfp) in blocks {
        area += bfp * (tp + 0.5 * btp);
        tp += btp;
    }
    Ok(area / (pos * neg))
}

/// Area under the weighted precision-recall curve with step interpolation,
/// i.e. the sum of precision at each threshold times the recall gained.
pub fn pr_auc(labels: &[bool], scores: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    let w = check_scored(labels, scores, weights)?;
    let blocks = tie_blocks(labels, scores, &w);
    let pos: f64 = blocks.iter().map(|b| b.0).sum();
    if pos <= 0.0 {
        return Err(Error::Input("pr_auc needs at least one positive label with weight".into()));
    }
    let (mut tp, mut fp, mut area) = (0.0, 0.0, 0.0);
    for (btp, bfp) in blocks {
        tp += btp;
        fp += bfp;
        if btp > 0.0 {
            area += (btp / pos) * tp / (tp + fp);
        }
    }
    Ok(area)
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between `U` and `|X − X̂|` over `idx`. `None` when
/// either series is constant.
pub fn pearson_uq_error(
    u: &DenseMatrix,
    x: &DenseMatrix,
    xhat: &DenseMatrix,
    idx: &[Index],
) -> Result<Option<f64>> {
    if u.dim() != x.dim() || xhat.dim() != x.dim() {
        return Err(Error::Shape("U, X and Xhat must share a shape".into()));
    }
    if idx.len() < 2 {
        return Err(Error::Input("pearson_uq_error needs at least two test entries".into()));
    }
    let us: Vec<f64> = idx.iter().map(|&ij| u[ij]).collect();
    let errs: Vec<f64> = idx.iter().map(|&ij| (x[ij] - xhat[ij]).abs()).collect();
    Ok(pearson(&us, &errs))
}

/// Population std over mean of `U` at `idx`. `None` when the mean is zero.
pub fn smr(u: &DenseMatrix, idx: &[Index]) -> Result<Option<f64>> {
    if idx.is_empty() {
        return Err(Error::Input("smr over an empty index set".into()));
    }
    let vals: Vec<f64> = idx.iter().map(|&ij| u[ij]).collect();
    let (mean, std) = mean_std(&vals);
    if mean == 0.0 {
        return Ok(None);
    }
    Ok(Some(std / mean))
}

/// Scales each SMR by its correlation relative to the largest correlation
/// in the sweep.
pub fn nsmr(smr_values: &[f64], r_values: &[f64]) -> Result<Vec<f64>> {
    if smr_values.len() != r_values.len() {
        return Err(Error::Shape(format!(
            "{} SMR values for {} correlations",
            smr_values.len(),
            r_values.len()
        )));
    }
    let rmax = r_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(rmax > 0.0) {
        return Err(Error::Degenerate("nsmr needs a positive maximum correlation".into()));
    }
    Ok(smr_values.iter().zip(r_values).map(|(s, r)| s * r / rmax).collect())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Metrics for one run. Undefined quantities are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub rmse_non_abstained: Option<f64>,
    pub fraction_abstained: f64,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub uq_roc_auc: Option<f64>,
    pub uq_pr_auc: Option<f64>,
    pub pearson_uq_error: Option<f64>,
    pub smr: Option<f64>,
    /// Filled in across a sweep by [`fill_nsmr`].
    pub nsmr: Option<f64>,
}

pub const EVAL_COLUMNS: [&str; 10] = [
    "rmse",
    "rmse_non_abstained",
    "fraction_abstained",
    "roc_auc",
    "pr_auc",
    "uq_roc_auc",
    "uq_pr_auc",
    "pearson_uq_error",
    "smr",
    "nsmr",
];

/// Formats a metric for CSV; missing values become `NA`.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.10}"),
        _ => "NA".to_string(),
    }
}

impl EvalReport {
    pub fn values(&self) -> [Option<f64>; 10] {
        [
            Some(self.rmse),
            self.rmse_non_abstained,
            Some(self.fraction_abstained),
            self.roc_auc,
            self.pr_auc,
            self.uq_roc_auc,
            self.uq_pr_auc,
            self.pearson_uq_error,
            self.smr,
            self.nsmr,
        ]
    }

    pub fn csv_header() -> String {
        EVAL_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().iter().map(|v| fmt_metric(*v)).collect::<Vec<_>>().join(",")
    }
}

/// Inputs for [`evaluate`]; all index sets refer to the same matrix.
pub struct EvalInput<'a> {
    pub x: &'a DenseMatrix,
    pub prediction: &'a DenseMatrix,
    pub uncertainty: &'a DenseMatrix,
    pub train: &'a [Index],
    pub test: &'a [Index],
}

/// Computes every metric for one run. AUCs are skipped (left `None`) when
/// the test labels are not binary or lack a class.
pub fn evaluate(input: &EvalInput<'_>) -> Result<EvalReport> {
    let EvalInput { x, prediction, uncertainty: u, train, test } = *input;
    let tau = crate::uq::abstention_threshold(u, train)?;
    let decision = crate::uq::abstain(u, tau, test)?;
    let flags: Vec<bool> = test.iter().map(|&ij| u[ij] > tau).collect();
    let mut report = EvalReport {
        rmse: rmse(x, prediction, test)?,
        rmse_non_abstained: rmse_non_abstained(x, prediction, test, &flags)?,
        fraction_abstained: decision.fraction_abstained,
        pearson_uq_error: if test.len() >= 2 {
            pearson_uq_error(u, x, prediction, test)?
        } else {
            None
        },
        smr: smr(u, test)?,
        ..EvalReport::default()
    };
    let binary = test.iter().all(|&ij| x[ij] == 0.0 || x[ij] == 1.0);
    if binary {
        let labels: Vec<bool> = test.iter().map(|&ij| x[ij] == 1.0).collect();
        let scores: Vec<f64> = test.iter().map(|&ij| prediction[ij]).collect();
        let weights = crate::uq::uq_weights(u, train, test)?;
        report.roc_auc = roc_auc(&labels, &scores, None).ok();
        report.pr_auc = pr_auc(&labels, &scores, None).ok();
        report.uq_roc_auc = roc_auc(&labels, &scores, Some(&weights)).ok();
        report.uq_pr_auc = pr_auc(&labels, &scores, Some(&weights)).ok();
    }
    Ok(report)
}

/// Sets `nsmr` on each report from the sweep's SMR and correlation values.
/// Reports lacking either value, or sweeps with no positive correlation,
/// get `None`.
pub fn fill_nsmr(reports: &mut [EvalReport]) {
    let rmax = reports
        .iter()
        .filter(|r| r.smr.is_some())
        .filter_map(|r| r.pearson_uq_error)
        .fold(f64::NEG_INFINITY, f64::max);
    for r in reports.iter_mut() {
        r.nsmr = match (r.smr, r.pearson_uq_error) {
            (Some(s), Some(c)) if rmax > 0.0 => Some(s * c / rmax),
            _ => None,
        };
    }
}

/// Mean and twice the population standard deviation of a metric over the
/// runs where it is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub two_std: f64,
    pub count: usize,
}

pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Option<Summary> {
    let v: Vec<f64> = values.into_iter().flatten().filter(|v| v.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    let (mean, std) = mean_std(&v);
    Some(Summary { mean, two_std: 2.0 * std, count: v.len() })
}

/// Per-metric summaries in [`EVAL_COLUMNS`] order.
pub fn aggregate(reports: &[EvalReport]) -> Vec<Option<Summary>> {
    (0..EVAL_COLUMNS.len())
        .map(|c| summarize(reports.iter().map(|r| r.values()[c])))
        .collect()
}
