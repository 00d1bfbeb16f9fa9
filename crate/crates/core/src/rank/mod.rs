//! Automatic rank selection over a perturbation ensemble.
//!
//! For every candidate rank the data is perturbed `P` times, each copy is
//! factorized, the resulting W columns are clustered across copies, and the
//! stability of those clusters (silhouettes) picks the rank.

mod cluster;
mod stats;

use ndarray::{Array1, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boolean::{binarize_factors, binarize_rows, boolean_cluster, Binarizer, Thresholder};
use crate::error::{Error, Result};
use crate::matrix::{
    column_errors, nnls_regress_masked, perturb_boolean, perturb_uniform, BoolMatrix, DenseMatrix,
    MaskMatrix, NnlsOptions, RandomSource,
};
use crate::solvers::{bnmf, nmf_mu, predict, rnmf, wnmf, FactorModel, Factors, ModelKind, SolverOptions};

pub use cluster::{custom_cluster, silhouette_scores, CustomClusterResult, Silhouettes};
pub use stats::wilcoxon_ranksum;

/// Minimum silhouette a rank needs to count as stable.
pub const DEFAULT_SILHOUETTE_THRESHOLD: f64 = 0.8;
/// Significance level for moving the selection to a larger rank.
pub const SELECTION_ALPHA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSpec {
    /// Number of perturbed copies per rank.
    pub perturbations: usize,
    /// Multiplicative noise level for real-valued data.
    pub epsilon: f64,
    /// Boolean perturbation: fraction of zeros flipped on.
    pub eps_pos: f64,
    /// Boolean perturbation: fraction of ones flipped off.
    pub eps_neg: f64,
    pub kind: ModelKind,
    pub options: SolverOptions,
    /// `Uniform` keeps factors real. Anything else binarizes them and
    /// switches clustering to the Boolean form.
    pub thresholder: Thresholder,
    pub seed: u64,
    pub silhouette_threshold: f64,
    /// A rank is invalid when more than this fraction of its runs fail.
    pub max_failure_rate: f64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            perturbations: 10,
            epsilon: 0.015,
            eps_pos: 0.015,
            eps_neg: 0.015,
            kind: ModelKind::Wnmf,
            options: SolverOptions::default(),
            thresholder: Thresholder::Uniform,
            seed: 0,
            silhouette_threshold: DEFAULT_SILHOUETTE_THRESHOLD,
            max_failure_rate: 0.2,
        }
    }
}

impl EnsembleSpec {
    /// Factors are binarized and clustered by Hamming distance.
    pub fn boolean_mode(&self) -> bool {
        self.thresholder != Thresholder::Uniform
    }

    /// Perturbations flip bits instead of scaling values.
    pub fn boolean_perturbation(&self) -> bool {
        self.boolean_mode() || self.kind == ModelKind::Bnmf
    }

    pub fn validate(&self) -> Result<()> {
        if self.perturbations < 2 {
            return Err(Error::Parameter("the ensemble needs at least 2 perturbations".into()));
        }
        if self.kind == ModelKind::Lmf {
            return Err(Error::Parameter("lmf is not a rank-scan solver".into()));
        }
        if self.boolean_perturbation() {
            for (name, eps) in [("eps_pos", self.eps_pos), ("eps_neg", self.eps_neg)] {
                if !(0.0..1.0).contains(&eps) {
                    return Err(Error::Parameter(format!("{name} must lie in [0, 1)")));
                }
            }
        } else if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Parameter("epsilon must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::Parameter("max_failure_rate must lie in [0, 1]".into()));
        }
        self.options.validate()
    }
}

/// Everything computed for one candidate rank.
#[derive(Clone, Debug)]
pub struct RankRecord {
    pub k: usize,
    /// False when too many runs failed; such ranks are never selected.
    pub valid: bool,
    pub failures: Vec<String>,
    pub silhouettes: Vec<f64>,
    pub min_silhouette: f64,
    pub mean_silhouette: f64,
    /// Squared relative error of `W̃ H^reg` on the training entries.
    pub relative_error: f64,
    pub column_errors: Vec<f64>,
    pub robust_w: DenseMatrix,
    pub regressed_h: DenseMatrix,
    /// Mean biases across runs (RNMF only).
    pub row_bias: Option<Array1<f64>>,
    pub col_bias: Option<Array1<f64>>,
    pub global_offset: Option<f64>,
    /// `W̃ H^reg`, plus the mean biases for RNMF.
    pub prediction: DenseMatrix,
    /// Population standard deviation of the per-run reconstructions.
    pub uncertainty: DenseMatrix,
    pub cluster_trace: Vec<f64>,
    /// A cluster had a single member or a zero column was seen.
    pub flagged: bool,
}

impl RankRecord {
    fn invalid(k: usize, shape: (usize, usize), failures: Vec<String>) -> Self {
        Self {
            k,
            valid: false,
            failures,
            silhouettes: vec![-1.0; k],
            min_silhouette: -1.0,
            mean_silhouette: -1.0,
            relative_error: f64::INFINITY,
            column_errors: vec![f64::INFINITY; shape.1],
            robust_w: DenseMatrix::zeros((shape.0, k)),
            regressed_h: DenseMatrix::zeros((k, shape.1)),
            row_bias: None,
            col_bias: None,
            global_offset: None,
            prediction: DenseMatrix::zeros(shape),
            uncertainty: DenseMatrix::zeros(shape),
            cluster_trace: vec![],
            flagged: true,
        }
    }

    /// The robust factors as a model of the given kind.
    pub fn model(&self, kind: ModelKind, options: &SolverOptions) -> FactorModel {
        let boolean = kind == ModelKind::Bnmf
            && self.robust_w.iter().chain(self.regressed_h.iter()).all(|&v| v == 0.0 || v == 1.0);
        let factors = if boolean {
            Factors::Boolean {
                w: BoolMatrix::from_dense(&self.robust_w).expect("checked Boolean"),
                h: BoolMatrix::from_dense(&self.regressed_h).expect("checked Boolean"),
            }
        } else {
            Factors::Real {
                w: self.robust_w.clone(),
                h: self.regressed_h.clone(),
            }
        };
        FactorModel {
            kind,
            factors,
            row_bias: self.row_bias.clone(),
            col_bias: self.col_bias.clone(),
            global_offset: self.global_offset,
            trace: vec![self.relative_error],
            iterations: 0,
            converged: true,
            options: options.clone(),
            thresholds: None,
            degenerate_components: vec![],
        }
    }
}

#[derive(Clone, Debug)]
pub struct RankScanResult {
    pub k_min: usize,
    pub k_max: usize,
    pub records: Vec<RankRecord>,
    /// Rank-sum p-value between the column errors of each rank and the next.
    pub pvalues: Vec<f64>,
    pub k_opt: usize,
    pub low_confidence: bool,
    /// p-values of `k_opt` against every larger rank.
    pub selection_pvalues: Vec<(usize, f64)>,
}

impl RankScanResult {
    pub fn record(&self, k: usize) -> Option<&RankRecord> {
        self.records.iter().find(|r| r.k == k)
    }

    pub fn selected(&self) -> &RankRecord {
        self.record(self.k_opt).expect("k_opt is a scanned rank")
    }

    /// One row per rank: `k,valid,min_silhouette,mean_silhouette,relative_error,p_value_vs_next`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,valid,min_silhouette,mean_silhouette,relative_error,p_value_vs_next\n");
        for (idx, r) in self.records.iter().enumerate() {
            let p = self.pvalues.get(idx).map(|p| format!("{p:?}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:?},{:?},{:?},{}\n",
                r.k, r.valid, r.min_silhouette, r.mean_silhouette, r.relative_error, p
            ));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub k_opt: usize,
    pub low_confidence: bool,
    pub pvalues: Vec<(usize, f64)>,
}

/// Largest stable rank that still lowers the reconstruction error.
///
/// Ranks whose minimum silhouette reaches `sill_thr` are stable. Walking up
/// from the smallest stable rank, the choice moves to a larger stable rank
/// only when its column errors are significantly lower than those of the
/// current choice (two-sided rank-sum p below [`SELECTION_ALPHA`] and a
/// lower median). When no rank is stable, the rank with the highest minimum silhouette is returned
/// with `low_confidence` set; ties go to the lower relative error and then
/// the smaller rank.
pub fn select_k(scan: &RankScanResult, sill_thr: f64) -> Result<Selection> {
    select_from(&scan.records, sill_thr)
}

fn select_from(records: &[RankRecord], sill_thr: f64) -> Result<Selection> {
    let valid: Vec<&RankRecord> = records.iter().filter(|r| r.valid).collect();
    if valid.is_empty() {
        return Err(Error::Degenerate("no rank produced a valid ensemble".into()));
    }
    let stable: Vec<&RankRecord> = valid.iter().copied().filter(|r| r.min_silhouette >= sill_thr).collect();
    let (chosen, low_confidence) = match stable.split_first() {
        Some((&first, rest)) => {
            let mut current = first;
            for &r in rest {
                let p = wilcoxon_ranksum(&current.column_errors, &r.column_errors);
                if p < SELECTION_ALPHA && median(&r.column_errors) < median(&current.column_errors) {
                    current = r;
                }
            }
            (current, false)
        }
        None => {
            let best = valid
                .iter()
                .copied()
                .reduce(|best, r| {
                    let better = r.min_silhouette > best.min_silhouette
                        || (r.min_silhouette == best.min_silhouette
                            && (r.relative_error < best.relative_error
                                || (r.relative_error == best.relative_error && r.k < best.k)));
                    if better {
                        r
                    } else {
                        best
                    }
                })
                .expect("non-empty");
            (best, true)
        }
    };
    let pvalues = valid
        .iter()
        .filter(|r| r.k > chosen.k)
        .map(|r| (r.k, wilcoxon_ranksum(&chosen.column_errors, &r.column_errors)))
        .collect();
    Ok(Selection {
        k_opt: chosen.k,
        low_confidence,
        pvalues,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// One solver run on one perturbed copy.
struct RunOutput {
    w_real: DenseMatrix,
    w_bool: Option<BoolMatrix>,
    row_bias: Option<Array1<f64>>,
    col_bias: Option<Array1<f64>>,
    global_offset: Option<f64>,
    reconstruction: DenseMatrix,
}

/// Scans ranks `k_min..=k_max`. `mask` marks the training entries; held-out
/// entries are never read by the solvers and do not count toward errors.
pub fn rank_scan(
    x: &DenseMatrix,
    mask: Option<&MaskMatrix>,
    spec: &EnsembleSpec,
    k_min: usize,
    k_max: usize,
) -> Result<RankScanResult> {
    spec.validate()?;
    let (n, m) = x.dim();
    if k_min == 0 || k_min > k_max || k_max > n.min(m) {
        return Err(Error::Parameter(format!(
            "rank range {k_min}..={k_max} invalid for a {n}×{m} matrix"
        )));
    }
    let ones;
    let mask = match mask {
        Some(mk) => {
            crate::matrix::validate_mask(mk, (n, m), true)?;
            mk
        }
        None => {
            ones = DenseMatrix::ones((n, m));
            &ones
        }
    };
    // Held-out entries are zeroed so no code path can see them.
    let x_train = x * &mask.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let x_bool = if spec.boolean_perturbation() {
        Some(BoolMatrix::from_dense(&x_train)?)
    } else {
        crate::matrix::ensure_nonnegative(&x_train, "X")?;
        None
    };

    let mut records = Vec::with_capacity(k_max - k_min + 1);
    for k in k_min..=k_max {
        let runs: Vec<Result<RunOutput>> = (0..spec.perturbations)
            .into_par_iter()
            .map(|q| single_run(&x_train, x_bool.as_ref(), mask, spec, k, q))
            .collect();
        records.push(aggregate(&x_train, mask, spec, k, runs)?);
    }

    let pvalues = records
        .windows(2)
        .map(|pair| {
            if pair[0].valid && pair[1].valid {
                wilcoxon_ranksum(&pair[0].column_errors, &pair[1].column_errors)
            } else {
                f64::NAN
            }
        })
        .collect();
    let selection = select_from(&records, spec.silhouette_threshold)?;
    Ok(RankScanResult {
        k_min,
        k_max,
        records,
        pvalues,
        k_opt: selection.k_opt,
        low_confidence: selection.low_confidence,
        selection_pvalues: selection.pvalues,
    })
}

fn single_run(
    x_train: &DenseMatrix,
    x_bool: Option<&BoolMatrix>,
    mask: &MaskMatrix,
    spec: &EnsembleSpec,
    k: usize,
    q: usize,
) -> Result<RunOutput> {
    let base = RandomSource::new(spec.seed).derive(&[k as u64, q as u64]);
    let opts = spec.options.clone().with_seed(base.derive(&[1]));
    let noise = base.derive(&[0]);

    let perturbed_bool = match x_bool {
        Some(xb) => Some(perturb_boolean(xb, spec.eps_pos, spec.eps_neg, &noise)?),
        None => None,
    };
    let perturbed = match &perturbed_bool {
        Some(b) => b.to_dense(),
        None => perturb_uniform(x_train, spec.epsilon, &noise)?,
    };

    let model = match spec.kind {
        ModelKind::Nmf => nmf_mu(&(&perturbed * mask), k, &opts)?,
        ModelKind::Wnmf => wnmf(&perturbed, mask, k, &opts)?,
        ModelKind::Rnmf => rnmf(&perturbed, mask, k, &opts)?,
        ModelKind::Bnmf => bnmf(
            perturbed_bool.as_ref().expect("bnmf perturbs Boolean data"),
            Some(mask),
            k,
            spec.thresholder,
            &opts,
        )?,
        ModelKind::Lmf => unreachable!("rejected by validate"),
    };

    let (w_real, w_bool, reconstruction) = match &model.factors {
        Factors::Boolean { w, h } => (w.to_dense(), Some(w.clone()), w.to_dense().dot(&h.to_dense())),
        Factors::Real { w, h } if spec.boolean_mode() => {
            let binarizer = match spec.thresholder {
                Thresholder::Otsu => Binarizer::Otsu,
                Thresholder::KMeans => Binarizer::KMeans,
                Thresholder::Search => Binarizer::Search {
                    x: perturbed_bool.as_ref().expect("Boolean mode perturbs Boolean data"),
                    mask: Some(mask),
                    max_sweeps: spec.options.search_sweeps,
                },
                Thresholder::Uniform => unreachable!("not Boolean mode"),
            };
            let b = binarize_factors(w, h, binarizer)?;
            let recon = b.w.to_dense().dot(&b.h.to_dense());
            (b.w.to_dense(), Some(b.w), recon)
        }
        Factors::Real { w, .. } => (w.clone(), None, predict(&model)),
    };
    if reconstruction.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite reconstruction".into()));
    }
    Ok(RunOutput {
        w_real,
        w_bool,
        row_bias: model.row_bias,
        col_bias: model.col_bias,
        global_offset: model.global_offset,
        reconstruction,
    })
}

fn mean_vector(vs: &[&Array1<f64>]) -> Array1<f64> {
    let mut acc = Array1::zeros(vs[0].len());
    for v in vs {
        acc += *v;
    }
    acc / vs.len() as f64
}

fn aggregate(
    x_train: &DenseMatrix,
    mask: &MaskMatrix,
    spec: &EnsembleSpec,
    k: usize,
    runs: Vec<Result<RunOutput>>,
) -> Result<RankRecord> {
    let shape = x_train.dim();
    let total = runs.len();
    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (q, run) in runs.into_iter().enumerate() {
        match run {
            Ok(r) => ok.push(r),
            Err(e) => failures.push(format!("perturbation {q}: {e}")),
        }
    }
    if failures.len() as f64 > spec.max_failure_rate * total as f64 || ok.len() < 2 {
        return Ok(RankRecord::invalid(k, shape, failures));
    }

    let (robust_w, aligned, cluster_trace, mut flagged) = if spec.boolean_mode() {
        let stack: Vec<BoolMatrix> = ok.iter().map(|r| r.w_bool.clone().expect("Boolean mode")).collect();
        let res = boolean_cluster(&stack)?;
        let aligned: Vec<DenseMatrix> = res.aligned.iter().map(BoolMatrix::to_dense).collect();
        let trace = res.trace.iter().map(|&v| v as f64).collect();
        (res.centroids.to_dense(), aligned, trace, false)
    } else {
        let stack: Vec<DenseMatrix> = ok.iter().map(|r| r.w_real.clone()).collect();
        let res = custom_cluster(&stack)?;
        let flagged = !res.zero_columns.is_empty();
        (res.medians, res.aligned, res.trace, flagged)
    };
    let sil = silhouette_scores(&aligned)?;
    flagged |= sil.singleton;

    let (row_bias, col_bias, global_offset) = if spec.kind == ModelKind::Rnmf {
        let rb: Vec<&Array1<f64>> = ok.iter().filter_map(|r| r.row_bias.as_ref()).collect();
        let cb: Vec<&Array1<f64>> = ok.iter().filter_map(|r| r.col_bias.as_ref()).collect();
        let mu = ok.iter().filter_map(|r| r.global_offset).sum::<f64>() / ok.len() as f64;
        (Some(mean_vector(&rb)), Some(mean_vector(&cb)), Some(mu))
    } else {
        (None, None, None)
    };

    // Regress H against the robust W on the unperturbed training data, with
    // any bias structure removed first.
    let mut target = x_train.clone();
    if let (Some(rb), Some(cb), Some(mu)) = (&row_bias, &col_bias, global_offset) {
        for ((i, j), v) in target.indexed_iter_mut() {
            *v -= mu + rb[i] + cb[j];
        }
    }
    let reg = nnls_regress_masked(&target, mask, &robust_w, NnlsOptions::default())?;
    let mut regressed_h = reg.h;
    flagged |= !reg.degenerate_rows.is_empty();
    if spec.kind == ModelKind::Bnmf && spec.boolean_mode() {
        let rule = match spec.thresholder {
            Thresholder::Otsu => Thresholder::Otsu,
            _ => Thresholder::KMeans,
        };
        regressed_h = binarize_rows(&regressed_h, rule)?.to_dense();
    }

    let mut prediction = robust_w.dot(&regressed_h);
    crate::solvers::add_biases(&mut prediction, row_bias.as_ref(), col_bias.as_ref(), global_offset);

    let (mut num, mut den) = (0.0, 0.0);
    Zip::from(x_train).and(&prediction).and(mask).for_each(|&a, &b, &wt| {
        num += wt * (a - b) * (a - b);
        den += wt * a * a;
    });
    let relative_error = if den > 0.0 { num / den } else { num };
    let column_errors = column_errors(x_train, &prediction, Some(mask));

    let stack: Vec<DenseMatrix> = ok.into_iter().map(|r| r.reconstruction).collect();
    let uncertainty = crate::uq::uncertainty_matrix(&stack)?.u;

    Ok(RankRecord {
        k,
        valid: true,
        failures,
        min_silhouette: sil.min(),
        mean_silhouette: sil.mean(),
        silhouettes: sil.per_cluster,
        relative_error,
        column_errors,
        robust_w,
        regressed_h,
        row_bias,
        col_bias,
        global_offset,
        prediction,
        uncertainty,
        cluster_trace,
        flagged,
    })
}
