//! Single-rank factorization engines.

mod bnmf;
mod lmf;
mod nmf;
mod persist;
mod rnmf;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boolean::ThresholdPair;
use crate::error::{Error, Result};
use crate::matrix::{boolean_matmul, BoolMatrix, DenseMatrix, MaskMatrix, RandomSource};

pub use bnmf::bnmf;
pub use lmf::{lmf, LmfParams};
pub use nmf::{nmf_mu, wnmf};
pub use persist::{load_model, save_model};
pub use rnmf::rnmf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nmf,
    Wnmf,
    Rnmf,
    Bnmf,
    Lmf,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Nmf => "nmf",
            ModelKind::Wnmf => "wnmf",
            ModelKind::Rnmf => "rnmf",
            ModelKind::Bnmf => "bnmf",
            ModelKind::Lmf => "lmf",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nmf" => Ok(ModelKind::Nmf),
            "wnmf" => Ok(ModelKind::Wnmf),
            "rnmf" => Ok(ModelKind::Rnmf),
            "bnmf" => Ok(ModelKind::Bnmf),
            "lmf" => Ok(ModelKind::Lmf),
            other => Err(Error::Parameter(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once the relative objective change drops to this.
    pub tol: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub eta_w: f64,
    pub eta_h: f64,
    pub seed: RandomSource,
    /// RNMF only: learn the bias terms and global offset. When off they stay zero.
    pub use_biases: bool,
    /// BNMF only: sweep budget for the final threshold search.
    pub search_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            tol: 1e-6,
            lambda: 0.01,
            alpha: 0.01,
            beta: 0.01,
            gamma: 0.01,
            delta: 0.01,
            eta: 0.005,
            eta_w: 0.005,
            eta_h: 0.005,
            seed: RandomSource::new(0),
            use_biases: true,
            search_sweeps: 50,
        }
    }
}

impl SolverOptions {
    pub fn with_seed(mut self, seed: RandomSource) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Parameter("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Parameter("tol must be positive".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be non-negative")));
            }
        }
        for (name, v) in [("eta", self.eta), ("eta_w", self.eta_w), ("eta_h", self.eta_h)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Factors {
    Real { w: DenseMatrix, h: DenseMatrix },
    Boolean { w: BoolMatrix, h: BoolMatrix },
}

impl Factors {
    pub fn w(&self) -> DenseMatrix {
        match self {
            Factors::Real { w, .. } => w.clone(),
            Factors::Boolean { w, .. } => w.to_dense(),
        }
    }

    pub fn h(&self) -> DenseMatrix {
        match self {
            Factors::Real { h, .. } => h.clone(),
            Factors::Boolean { h, .. } => h.to_dense(),
        }
    }

    pub fn is_boolean(&self) -> bool {
        matches!(self, Factors::Boolean { .. })
    }

    pub fn rank(&self) -> usize {
        match self {
            Factors::Real { w, .. } => w.ncols(),
            Factors::Boolean { w, .. } => w.cols(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Factors::Real { w, h } => (w.nrows(), h.ncols()),
            Factors::Boolean { w, h } => (w.rows(), h.cols()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    pub kind: ModelKind,
    pub factors: Factors,
    pub row_bias: Option<Array1<f64>>,
    pub col_bias: Option<Array1<f64>>,
    pub global_offset: Option<f64>,
    /// Objective after initialization and after each sweep.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub options: SolverOptions,
    /// BNMF: thresholds that produced the Boolean factors.
    pub thresholds: Option<ThresholdPair>,
    pub degenerate_components: Vec<usize>,
}

impl FactorModel {
    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    pub fn final_objective(&self) -> f64 {
        self.trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProductMode {
    /// Ordinary real matrix product.
    #[default]
    Real,
    /// OR-of-ANDs product; only meaningful for Boolean factors.
    Boolean,
}

/// Reconstruction `X̂` for the model's kind.
pub fn predict(model: &FactorModel) -> DenseMatrix {
    predict_with(model, ProductMode::Real)
}

pub fn predict_with(model: &FactorModel, mode: ProductMode) -> DenseMatrix {
    let mut out = match (&model.factors, mode) {
        (Factors::Boolean { w, h }, ProductMode::Boolean) => {
            boolean_matmul(w, h).expect("model factors conform").to_dense()
        }
        (f, _) => f.w().dot(&f.h()),
    };
    add_biases(&mut out, model.row_bias.as_ref(), model.col_bias.as_ref(), model.global_offset);
    if model.kind == ModelKind::Lmf {
        out.mapv_inplace(sigmoid);
    }
    out
}

pub(crate) fn add_biases(
    out: &mut DenseMatrix,
    row: Option<&Array1<f64>>,
    col: Option<&Array1<f64>>,
    offset: Option<f64>,
) {
    let mu = offset.unwrap_or(0.0);
    for ((i, j), v) in out.indexed_iter_mut() {
        *v += mu + row.map_or(0.0, |b| b[i]) + col.map_or(0.0, |b| b[j]);
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn check_rank(shape: (usize, usize), k: usize) -> Result<()> {
    if k == 0 || k > shape.0.min(shape.1) {
        return Err(Error::Parameter(format!(
            "rank {k} outside 1..={} for a {:?} matrix",
            shape.0.min(shape.1),
            shape
        )));
    }
    Ok(())
}

/// Uniform `(0, 1]` factors scaled by `sqrt(mean / k)`.
pub(crate) fn init_factors(n: usize, m: usize, k: usize, mean: f64, seed: &RandomSource) -> (DenseMatrix, DenseMatrix) {
    let scale = if mean > 0.0 { (mean / k as f64).sqrt() } else { (1.0 / k as f64).sqrt() };
    let mut rng = seed.rng();
    let w = Array2::from_shape_fn((n, k), |_| (1.0 - rng.random::<f64>()) * scale);
    let h = Array2::from_shape_fn((k, m), |_| (1.0 - rng.random::<f64>()) * scale);
    (w, h)
}

pub(crate) fn observed_mean(x: &DenseMatrix, mask: Option<&MaskMatrix>) -> f64 {
    match mask {
        None => x.mean().unwrap_or(0.0),
        Some(mk) => {
            let (s, c) = x
                .iter()
                .zip(mk.iter())
                .fold((0.0, 0.0), |(s, c), (&v, &w)| (s + w * v, c + w));
            if c > 0.0 {
                s / c
            } else {
                0.0
            }
        }
    }
}

pub(crate) fn relative_change(prev: f64, cur: f64) -> f64 {
    if prev == cur {
        0.0
    } else {
        (prev - cur).abs() / prev.abs().max(f64::MIN_POSITIVE)
    }
}

pub(crate) fn require_observed(mask: &MaskMatrix) -> Result<()> {
    if mask.iter().all(|&v| v == 0.0) {
        return Err(Error::Input("mask has no observed entries".into()));
    }
    Ok(())
}
