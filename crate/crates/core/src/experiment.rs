//! Cross-validated experiment sweeps: split, scan, predict, quantify, evaluate.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boolean::Thresholder;
use crate::datagen::{
    gen_dog, gen_gaussian, gen_planted_bipartite, gen_swimmer, load_ppi_edgelist, split_stratified, GroundTruth,
    PlantedSpec, Split,
};
use crate::error::{Error, Result};
use crate::matrix::{read_csv, write_csv, BoolMatrix, DenseMatrix, MaskMatrix, RandomSource};
use crate::metrics::{aggregate, evaluate, fill_nsmr, fmt_metric, EvalInput, EvalReport, EVAL_COLUMNS};
use crate::rank::{rank_scan, EnsembleSpec, RankScanResult};
use crate::solvers::{lmf, predict, save_model, ModelKind, SolverOptions};
use crate::uq::lmf_ensemble_from_prediction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nmfk,
    Wnmfk,
    Rnmfk,
    Bnmfk,
    Lmf,
    WnmfkLmf,
    RnmfkLmf,
    BnmfkLmf,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Nmfk,
        Method::Wnmfk,
        Method::Rnmfk,
        Method::Bnmfk,
        Method::Lmf,
        Method::WnmfkLmf,
        Method::RnmfkLmf,
        Method::BnmfkLmf,
    ];

    /// The rank-scanned factorization, if any.
    pub fn base_kind(self) -> Option<ModelKind> {
        match self {
            Method::Nmfk => Some(ModelKind::Nmf),
            Method::Wnmfk | Method::WnmfkLmf => Some(ModelKind::Wnmf),
            Method::Rnmfk | Method::RnmfkLmf => Some(ModelKind::Rnmf),
            Method::Bnmfk | Method::BnmfkLmf => Some(ModelKind::Bnmf),
            Method::Lmf => None,
        }
    }

    /// Adds LMF biases on top of the base reconstruction.
    pub fn uses_lmf(self) -> bool {
        matches!(self, Method::Lmf | Method::WnmfkLmf | Method::RnmfkLmf | Method::BnmfkLmf)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Nmfk => "nmfk",
            Method::Wnmfk => "wnmfk",
            Method::Rnmfk => "rnmfk",
            Method::Bnmfk => "bnmfk",
            Method::Lmf => "lmf",
            Method::WnmfkLmf => "wnmfk_lmf",
            Method::RnmfkLmf => "rnmfk_lmf",
            Method::BnmfkLmf => "bnmfk_lmf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Parameter(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Dog,
    Swimmer,
    Gaussian,
    Planted,
    /// Dense headerless CSV at `path`, optionally with a known-entry mask.
    Csv,
    /// Labeled edge list at `path`.
    Ppi,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dog" => Ok(DatasetKind::Dog),
            "swimmer" => Ok(DatasetKind::Swimmer),
            "gaussian" => Ok(DatasetKind::Gaussian),
            "planted" => Ok(DatasetKind::Planted),
            "csv" => Ok(DatasetKind::Csv),
            "ppi" => Ok(DatasetKind::Ppi),
            other => Err(Error::Parameter(format!("unknown dataset {other:?}"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(s.as_str().unwrap_or_default())
    }
}

/// Flat experiment configuration. Every field can be set from a
/// `key = value` line or the matching command-line flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub path: Option<PathBuf>,
    /// CSV of known entries for `csv` datasets; all entries when absent.
    pub mask_path: Option<PathBuf>,
    pub rows: usize,
    pub cols: usize,
    pub true_k: usize,
    pub data_seed: u64,
    pub noise: f64,
    /// Planted generator: link rate inside a shared community.
    pub within: f64,
    /// Planted generator: link rate outside every shared community.
    pub background: f64,
    /// Planted generator: log-normal spread of node degree propensities.
    pub degree_spread: f64,
    pub method: Method,
    pub threshold: Thresholder,
    pub k_min: usize,
    pub k_max: usize,
    pub perturbations: usize,
    pub epsilon: f64,
    pub eps_pos: f64,
    pub eps_neg: f64,
    pub test_sizes: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    /// Stratify splits by link label. Ignored for non-binary data.
    pub stratify: bool,
    pub silhouette_threshold: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta_w: f64,
    pub eta_h: f64,
    pub use_biases: bool,
    pub search_sweeps: usize,
    /// LMF rank. Defaults to the selected rank, or `k_max` for plain LMF.
    pub lmf_k: Option<usize>,
    pub lmf_eta: f64,
    pub lmf_lambda: f64,
    pub lmf_max_iters: usize,
    /// Evaluate every scanned rank, not just the selected one.
    pub all_ranks: bool,
    /// Write per-run directories next to the aggregate tables.
    pub save_runs: bool,
    /// Worker threads; 0 uses every core. Does not affect results.
    pub jobs: usize,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverOptions::default();
        let planted = PlantedSpec::default();
        Self {
            dataset: DatasetKind::Gaussian,
            path: None,
            mask_path: None,
            rows: 50,
            cols: 100,
            true_k: 3,
            data_seed: 0,
            noise: 0.0,
            within: planted.within,
            background: planted.background,
            degree_spread: planted.degree_spread,
            method: Method::Wnmfk,
            threshold: Thresholder::Uniform,
            k_min: 1,
            k_max: 8,
            perturbations: 10,
            epsilon: 0.015,
            eps_pos: 0.015,
            eps_neg: 0.015,
            test_sizes: vec![0.1],
            folds: 10,
            seed: 0,
            stratify: true,
            silhouette_threshold: crate::rank::DEFAULT_SILHOUETTE_THRESHOLD,
            max_iters: solver.max_iters,
            tol: solver.tol,
            alpha: solver.alpha,
            beta: solver.beta,
            lambda: solver.lambda,
            gamma: solver.gamma,
            delta: solver.delta,
            eta_w: solver.eta_w,
            eta_h: solver.eta_h,
            use_biases: true,
            search_sweeps: solver.search_sweeps,
            lmf_k: None,
            lmf_eta: solver.eta,
            lmf_lambda: 10.0,
            lmf_max_iters: solver.max_iters,
            all_ranks: false,
            save_runs: true,
            jobs: 0,
            output: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parameter(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Parameter(format!("invalid value {value:?} for {key}"))),
    }
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value.eq_ignore_ascii_case("none") || value.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

impl ExperimentConfig {
    /// Names accepted by [`ExperimentConfig::set`].
    pub const KEYS: [&'static str; 42] = [
        "dataset",
        "path",
        "mask_path",
        "rows",
        "cols",
        "true_k",
        "data_seed",
        "noise",
        "within",
        "background",
        "degree_spread",
        "method",
        "threshold",
        "k_min",
        "k_max",
        "perturbations",
        "epsilon",
        "eps_pos",
        "eps_neg",
        "test_sizes",
        "folds",
        "seed",
        "stratify",
        "silhouette_threshold",
        "max_iters",
        "tol",
        "alpha",
        "beta",
        "lambda",
        "gamma",
        "delta",
        "eta_w",
        "eta_h",
        "use_biases",
        "search_sweeps",
        "lmf_k",
        "lmf_eta",
        "lmf_lambda",
        "lmf_max_iters",
        "all_ranks",
        "save_runs",
        "jobs",
    ];

    /// Sets one field from its textual form. `output` is also accepted.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "dataset" => self.dataset = value.parse()?,
            "path" => self.path = Some(PathBuf::from(value)),
            "mask_path" => self.mask_path = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            "rows" | "n" => self.rows = parse_value(k, value)?,
            "cols" | "m" => self.cols = parse_value(k, value)?,
            "true_k" | "k" => self.true_k = parse_value(k, value)?,
            "data_seed" => self.data_seed = parse_value(k, value)?,
            "noise" => self.noise = parse_value(k, value)?,
            "within" => self.within = parse_value(k, value)?,
            "background" => self.background = parse_value(k, value)?,
            "degree_spread" => self.degree_spread = parse_value(k, value)?,
            "method" => self.method = value.parse()?,
            "threshold" | "boolean_threshold" => self.threshold = value.parse()?,
            "k_min" => self.k_min = parse_value(k, value)?,
            "k_max" => self.k_max = parse_value(k, value)?,
            "perturbations" => self.perturbations = parse_value(k, value)?,
            "epsilon" => self.epsilon = parse_value(k, value)?,
            "eps_pos" => self.eps_pos = parse_value(k, value)?,
            "eps_neg" => self.eps_neg = parse_value(k, value)?,
            "test_sizes" | "test_size" => {
                self.test_sizes = value
                    .split([',', ' '])
                    .filter(|t| !t.is_empty())
                    .map(|t| parse_value(k, t))
                    .collect::<Result<_>>()?
            }
            "folds" => self.folds = parse_value(k, value)?,
            "seed" => self.seed = parse_value(k, value)?,
            "stratify" => self.stratify = parse_bool(k, value)?,
            "silhouette_threshold" => self.silhouette_threshold = parse_value(k, value)?,
            "max_iters" => self.max_iters = parse_value(k, value)?,
            "tol" => self.tol = parse_value(k, value)?,
            "alpha" => self.alpha = parse_value(k, value)?,
            "beta" => self.beta = parse_value(k, value)?,
            "lambda" => self.lambda = parse_value(k, value)?,
            "gamma" => self.gamma = parse_value(k, value)?,
            "delta" => self.delta = parse_value(k, value)?,
            "eta_w" => self.eta_w = parse_value(k, value)?,
            "eta_h" => self.eta_h = parse_value(k, value)?,
            "use_biases" => self.use_biases = parse_bool(k, value)?,
            "search_sweeps" => self.search_sweeps = parse_value(k, value)?,
            "lmf_k" => self.lmf_k = parse_optional(k, value)?,
            "lmf_eta" => self.lmf_eta = parse_value(k, value)?,
            "lmf_lambda" => self.lmf_lambda = parse_value(k, value)?,
            "lmf_max_iters" => self.lmf_max_iters = parse_value(k, value)?,
            "all_ranks" => self.all_ranks = parse_bool(k, value)?,
            "save_runs" => self.save_runs = parse_bool(k, value)?,
            "jobs" => self.jobs = parse_value(k, value)?,
            other => return Err(Error::Parameter(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: idx + 1,
                    message: "expected key = value".into(),
                });
            };
            self.set(key, value).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// The configuration in the same `key = value` form `apply_text` reads.
    pub fn to_text(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for key in Self::KEYS.iter().chain(&["output"]) {
            let text = match &v[*key] {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(a) => a.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            out.push_str(&format!("{key} = {text}\n"));
        }
        out
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            lambda: self.lambda,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
            eta_w: self.eta_w,
            eta_h: self.eta_h,
            use_biases: self.use_biases,
            search_sweeps: self.search_sweeps,
            ..SolverOptions::default()
        }
    }

    pub fn lmf_options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.lmf_max_iters,
            tol: self.tol,
            lambda: self.lmf_lambda,
            eta: self.lmf_eta,
            ..SolverOptions::default()
        }
    }

    /// Checks ranges and method/threshold compatibility. Returns warnings
    /// for legal but costly choices.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.test_sizes.is_empty() {
            return Err(Error::Parameter("test_sizes is empty".into()));
        }
        if let Some(t) = self.test_sizes.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Parameter(format!("test size {t} outside (0, 1)")));
        }
        if self.folds == 0 {
            return Err(Error::Parameter("folds must be at least 1".into()));
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(Error::Parameter(format!("invalid rank range {}..={}", self.k_min, self.k_max)));
        }
        match (self.method, self.threshold) {
            (Method::Lmf, t) if t != Thresholder::Uniform => {
                return Err(Error::Parameter("lmf does not take a Boolean threshold".into()))
            }
            (Method::Bnmfk | Method::BnmfkLmf, Thresholder::Uniform) => {
                return Err(Error::Parameter("bnmfk needs threshold otsu, kmeans or search".into()))
            }
            (_, Thresholder::Search) => {
                warnings.push("threshold search is much slower than otsu or kmeans".into())
            }
            _ => {}
        }
        if matches!(self.dataset, DatasetKind::Csv | DatasetKind::Ppi) && self.path.is_none() {
            return Err(Error::Parameter(format!("dataset {} needs a path", self.dataset)));
        }
        self.solver_options().validate()?;
        if self.method.uses_lmf() {
            self.lmf_options().validate()?;
        }
        Ok(warnings)
    }
}

/// A matrix with its known entries and, for synthetic data, the truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub x: DenseMatrix,
    pub known: MaskMatrix,
    pub truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn is_binary(&self) -> bool {
        self.x.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

fn dataset_path(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.path
        .as_deref()
        .ok_or_else(|| Error::Parameter(format!("dataset {} needs a path", cfg.dataset)))
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let full = |x: DenseMatrix, truth: GroundTruth| Dataset {
        name: truth.generator.clone(),
        known: MaskMatrix::ones(x.dim()),
        x,
        truth: Some(truth),
    };
    match cfg.dataset {
        DatasetKind::Dog => {
            let (x, t) = gen_dog();
            Ok(full(x.to_dense(), t))
        }
        DatasetKind::Swimmer => {
            let (x, t) = gen_swimmer();
            Ok(full(x.to_dense(), t))
        }
        DatasetKind::Gaussian => {
            let (x, t) = gen_gaussian(cfg.rows, cfg.cols, cfg.true_k, cfg.data_seed, cfg.noise)?;
            Ok(full(x, t))
        }
        DatasetKind::Planted => {
            let spec = PlantedSpec {
                rows: cfg.rows,
                cols: cfg.cols,
                k: cfg.true_k,
                within: cfg.within,
                background: cfg.background,
                degree_spread: cfg.degree_spread,
                ..PlantedSpec::default()
            };
            let (x, t) = gen_planted_bipartite(&spec, cfg.data_seed)?;
            Ok(full(x.to_dense(), t))
        }
        DatasetKind::Csv => {
            let path = dataset_path(cfg)?;
            let x = read_csv(path)?;
            let known = match &cfg.mask_path {
                Some(p) => read_csv(p)?,
                None => MaskMatrix::ones(x.dim()),
            };
            if known.dim() != x.dim() {
                return Err(Error::Shape("mask and data shapes differ".into()));
            }
            Ok(Dataset {
                name: path.display().to_string(),
                x,
                known,
                truth: None,
            })
        }
        DatasetKind::Ppi => {
            let path = dataset_path(cfg)?;
            let (x, known) = load_ppi_edgelist(path)?.to_dense();
            Ok(Dataset {
                name: path.display().to_string(),
                x,
                known,
                truth: None,
            })
        }
    }
}

/// Wall-clock seconds per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub split: f64,
    pub scan: f64,
    pub predict: f64,
    pub evaluate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEvaluation {
    pub k: usize,
    pub selected: bool,
    pub report: EvalReport,
    /// The scanned model alone, for methods that add LMF biases.
    pub base: Option<EvalReport>,
}

/// Everything recorded for one (test size, fold) pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub threshold: Thresholder,
    pub test_size: f64,
    pub fold: usize,
    pub split_seed: u64,
    pub scan_seed: u64,
    pub k_opt: Option<usize>,
    pub low_confidence: bool,
    pub selection_pvalues: Vec<(usize, f64)>,
    pub evaluations: Vec<RankEvaluation>,
    pub error: Option<String>,
    pub timings: StageTimings,
}

impl RunRecord {
    pub fn selected(&self) -> Option<&RankEvaluation> {
        self.evaluations.iter().find(|e| e.selected)
    }

    pub fn at_rank(&self, k: usize) -> Option<&RankEvaluation> {
        self.evaluations.iter().find(|e| e.k == k)
    }
}

/// Prediction, uncertainty and optional factor model at one rank.
struct RankOutput {
    k: usize,
    prediction: DenseMatrix,
    base_prediction: Option<DenseMatrix>,
    uncertainty: DenseMatrix,
    model: Option<crate::solvers::FactorModel>,
}

struct RunArtifacts {
    split: Split,
    scan: Option<RankScanResult>,
    outputs: Vec<RankOutput>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub dataset: String,
    pub warnings: Vec<String>,
    pub runs: Vec<RunRecord>,
}

pub const AGGREGATE_KEYS: [&str; 10] = [
    "dataset",
    "method",
    "threshold",
    "test_size",
    "fold",
    "k",
    "selected",
    "k_opt",
    "low_confidence",
    "status",
];

impl ExperimentResult {
    /// One row per evaluated (test size, fold, k), without timings.
    pub fn aggregate_csv(&self) -> String {
        let mut out = format!("{},{}\n", AGGREGATE_KEYS.join(","), EVAL_COLUMNS.join(","));
        for run in &self.runs {
            let prefix = |k: String, selected: String, status: &str| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    self.dataset,
                    run.method,
                    run.threshold,
                    run.test_size,
                    run.fold,
                    k,
                    selected,
                    run.k_opt.map(|k| k.to_string()).unwrap_or_default(),
                    run.low_confidence,
                    status
                )
            };
            match &run.error {
                Some(e) => {
                    let status = format!("error: {}", e.replace([',', '\n'], ";"));
                    let na = vec!["NA"; EVAL_COLUMNS.len()].join(",");
                    out.push_str(&format!("{},{na}\n", prefix(String::new(), String::new(), &status)));
                }
                None => {
                    for e in &run.evaluations {
                        out.push_str(&format!(
                            "{},{}\n",
                            prefix(e.k.to_string(), e.selected.to_string(), "ok"),
                            e.report.csv_row()
                        ));
                    }
                }
            }
        }
        out
    }

    /// Mean and 2σ of each metric over the selected rank, per test size.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,threshold,test_size,runs,failed,k_opt_mode");
        for c in EVAL_COLUMNS {
            out.push_str(&format!(",{c}_mean,{c}_2std"));
        }
        out.push('\n');
        for &ts in &self.config.test_sizes {
            let runs: Vec<&RunRecord> = self.runs.iter().filter(|r| r.test_size == ts).collect();
            let failed = runs.iter().filter(|r| r.error.is_some()).count();
            let reports: Vec<EvalReport> = runs.iter().filter_map(|r| r.selected()).map(|e| e.report.clone()).collect();
            let mode = mode(runs.iter().filter_map(|r| r.k_opt)).map(|k| k.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                self.config.method,
                self.config.threshold,
                ts,
                runs.len(),
                failed,
                mode
            ));
            for s in aggregate(&reports) {
                out.push_str(&format!(
                    ",{},{}",
                    fmt_metric(s.map(|s| s.mean)),
                    fmt_metric(s.map(|s| s.two_std))
                ));
            }
            out.push('\n');
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("test_size,fold,split_s,scan_s,predict_s,evaluate_s\n");
        for r in &self.runs {
            let t = &r.timings;
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                r.test_size, r.fold, t.split, t.scan, t.predict, t.evaluate
            ));
        }
        out
    }

    /// Most frequent selected rank at `test_size`; ties go to the smaller rank.
    pub fn k_opt_mode(&self, test_size: f64) -> Option<usize> {
        mode(self.runs.iter().filter(|r| r.test_size == test_size).filter_map(|r| r.k_opt))
    }
}

fn mode(values: impl Iterator<Item = usize>) -> Option<usize> {
    let mut counts = std::collections::BTreeMap::new();
    for v in values {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    let top = *counts.values().max()?;
    counts.into_iter().find(|&(_, c)| c == top).map(|(k, _)| k)
}

fn seed_for(root: u64, tags: &[u64]) -> u64 {
    RandomSource::new(root).derive(tags).rng().random()
}

/// Seed of the train/test split for one `(test size index, fold)` cell.
pub fn split_seed(root: u64, test_size_index: usize, fold: usize) -> u64 {
    seed_for(root, &[0, test_size_index as u64, fold as u64])
}

/// The split a run uses; stratification only applies to binary data.
pub fn split_dataset(cfg: &ExperimentConfig, data: &Dataset, test_size: f64, seed: u64) -> Result<Split> {
    split_stratified(&data.x, &data.known, test_size, seed, cfg.stratify && data.is_binary())
}

fn secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

fn run_one(
    cfg: &ExperimentConfig,
    data: &Dataset,
    ts_idx: usize,
    fold: usize,
) -> (RunRecord, Option<RunArtifacts>) {
    let test_size = cfg.test_sizes[ts_idx];
    let split_seed = split_seed(cfg.seed, ts_idx, fold);
    let scan_seed = seed_for(cfg.seed, &[1, ts_idx as u64, fold as u64]);
    let mut record = RunRecord {
        method: cfg.method,
        threshold: cfg.threshold,
        test_size,
        fold,
        split_seed,
        scan_seed,
        k_opt: None,
        low_confidence: false,
        selection_pvalues: vec![],
        evaluations: vec![],
        error: None,
        timings: StageTimings::default(),
    };
    match run_stages(cfg, data, test_size, &mut record) {
        Ok(artifacts) => (record, Some(artifacts)),
        Err(e) => {
            record.error = Some(format!("{}: {e}", e.kind()));
            record.evaluations.clear();
            (record, None)
        }
    }
}

fn run_stages(cfg: &ExperimentConfig, data: &Dataset, test_size: f64, record: &mut RunRecord) -> Result<RunArtifacts> {
    let t = Instant::now();
    let split = split_dataset(cfg, data, test_size, record.split_seed)?;
    record.timings.split = secs(t);

    let t = Instant::now();
    let x_train = split.training_matrix(&data.x);
    let scan = match cfg.method.base_kind() {
        Some(kind) => {
            let mut options = cfg.solver_options();
            options.seed = RandomSource::new(record.scan_seed);
            let spec = EnsembleSpec {
                perturbations: cfg.perturbations,
                epsilon: cfg.epsilon,
                eps_pos: cfg.eps_pos,
                eps_neg: cfg.eps_neg,
                kind,
                options,
                thresholder: cfg.threshold,
                seed: record.scan_seed,
                silhouette_threshold: cfg.silhouette_threshold,
                ..EnsembleSpec::default()
            };
            let k_max = cfg.k_max.min(data.x.nrows().min(data.x.ncols()));
            let scan = rank_scan(&x_train, Some(&split.mask), &spec, cfg.k_min, k_max)?;
            record.k_opt = Some(scan.k_opt);
            record.low_confidence = scan.low_confidence;
            record.selection_pvalues = scan.selection_pvalues.clone();
            Some(scan)
        }
        None => None,
    };
    record.timings.scan = secs(t);

    let t = Instant::now();
    let ranks: Vec<usize> = match (&scan, cfg.all_ranks) {
        (Some(s), true) => s.records.iter().filter(|r| r.valid).map(|r| r.k).collect(),
        (Some(s), false) => vec![s.k_opt],
        (None, true) => (cfg.k_min..=cfg.k_max).collect(),
        (None, false) => vec![cfg.lmf_k.unwrap_or(cfg.k_max)],
    };
    let lmf_x = if cfg.method.uses_lmf() {
        Some(BoolMatrix::from_dense(&data.x).map_err(|_| Error::Input("LMF methods need binary data".into()))?)
    } else {
        None
    };
    let mut outputs = Vec::with_capacity(ranks.len());
    for &k in &ranks {
        let out = match &scan {
            Some(scan) => {
                let rec = scan.record(k).expect("rank was scanned");
                let model = rec.model(cfg.method.base_kind().expect("scanned"), &cfg.solver_options());
                let (prediction, base_prediction) = match &lmf_x {
                    Some(xb) => {
                        let lk = cfg.lmf_k.unwrap_or(k);
                        let mut opts = cfg.lmf_options();
                        opts.seed = RandomSource::new(record.scan_seed).derive(&[2, k as u64]);
                        let ens = lmf_ensemble_from_prediction(xb, &split.mask, &rec.prediction, lk, &opts)?;
                        (ens.probabilities, Some(rec.prediction.clone()))
                    }
                    None => (rec.prediction.clone(), None),
                };
                RankOutput {
                    k,
                    prediction,
                    base_prediction,
                    uncertainty: rec.uncertainty.clone(),
                    model: Some(model),
                }
            }
            None => {
                let mut opts = cfg.lmf_options();
                opts.seed = RandomSource::new(record.scan_seed).derive(&[2, k as u64]);
                let model = lmf(lmf_x.as_ref().expect("lmf method"), &split.mask, k, &opts)?;
                RankOutput {
                    k,
                    prediction: predict(&model),
                    base_prediction: None,
                    uncertainty: DenseMatrix::zeros(data.x.dim()),
                    model: Some(model),
                }
            }
        };
        outputs.push(out);
    }
    record.timings.predict = secs(t);

    let t = Instant::now();
    let selected = scan.as_ref().map(|s| s.k_opt).unwrap_or(ranks[0]);
    for out in &outputs {
        let eval = |prediction: &DenseMatrix| {
            evaluate(&EvalInput {
                x: &data.x,
                prediction,
                uncertainty: &out.uncertainty,
                train: &split.train,
                test: &split.test,
            })
        };
        record.evaluations.push(RankEvaluation {
            k: out.k,
            selected: out.k == selected,
            report: eval(&out.prediction)?,
            base: out.base_prediction.as_ref().map(eval).transpose()?,
        });
    }
    record.timings.evaluate = secs(t);
    Ok(RunArtifacts { split, scan, outputs })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_dir_name(test_size: f64, fold: usize) -> String {
    format!("ts{test_size}_fold{fold}")
}

fn save_run(dir: &Path, record: &RunRecord, artifacts: Option<&RunArtifacts>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("run.json"), &serde_json::to_string_pretty(record)?)?;
    let Some(a) = artifacts else { return Ok(()) };
    write_text(&dir.join("split.csv"), &a.split.to_csv())?;
    if let Some(scan) = &a.scan {
        write_text(&dir.join("scan.csv"), &scan.to_csv())?;
    }
    for out in &a.outputs {
        let suffix = if Some(out.k) == record.k_opt || a.outputs.len() == 1 {
            String::new()
        } else {
            format!("_k{}", out.k)
        };
        write_csv(dir.join(format!("predictions{suffix}.csv")), &out.prediction)?;
        write_csv(dir.join(format!("uncertainty{suffix}.csv")), &out.uncertainty)?;
        if let Some(model) = &out.model {
            save_model(dir.join(format!("model{suffix}")), model)?;
        }
    }
    Ok(())
}

/// Runs every (test size, fold) pair and, when `output` is set, writes
/// `aggregate.csv`, `summary.csv`, `timings.csv`, `config.txt`,
/// `experiment.json` and one directory per run.
///
/// Stage failures are recorded on the run and the sweep continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let warnings = cfg.validate()?;
    let data = load_dataset(cfg)?;
    let pairs: Vec<(usize, usize)> = (0..cfg.test_sizes.len())
        .flat_map(|t| (0..cfg.folds).map(move |f| (t, f)))
        .collect();
    let work = || -> Vec<(RunRecord, Option<RunArtifacts>)> {
        pairs.par_iter().map(|&(t, f)| run_one(cfg, &data, t, f)).collect()
    };
    let results = if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot build a pool of {} threads: {e}", cfg.jobs)))?
            .install(work)
    } else {
        work()
    };

    let mut runs: Vec<RunRecord> = results.iter().map(|(r, _)| r.clone()).collect();
    let mut flat: Vec<EvalReport> = runs.iter().flat_map(|r| r.evaluations.iter().map(|e| e.report.clone())).collect();
    fill_nsmr(&mut flat);
    let mut it = flat.into_iter();
    for r in runs.iter_mut() {
        for e in r.evaluations.iter_mut() {
            e.report = it.next().expect("one report per evaluation");
        }
    }

    let result = ExperimentResult {
        config: cfg.clone(),
        dataset: data.name.clone(),
        warnings,
        runs,
    };
    if let Some(out) = &cfg.output {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_text(&out.join("config.txt"), &cfg.to_text())?;
        write_text(&out.join("aggregate.csv"), &result.aggregate_csv())?;
        write_text(&out.join("summary.csv"), &result.summary_csv())?;
        write_text(&out.join("timings.csv"), &result.timings_csv())?;
        let meta = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "dataset": result.dataset,
            "config": cfg,
            "warnings": result.warnings,
            "runs": result.runs,
        });
        write_text(&out.join("experiment.json"), &serde_json::to_string_pretty(&meta)?)?;
        if cfg.save_runs {
            for ((_, artifacts), record) in results.iter().zip(&result.runs) {
                let dir = out.join("runs").join(run_dir_name(record.test_size, record.fold));
                save_run(&dir, record, artifacts.as_ref())?;
            }
        }
    }
    Ok(result)
}
