//! Logistic matrix factorization for Boolean link matrices.

use ndarray::{Array1, Axis, Zip};

use super::{
    init_factors, observed_mean, relative_change, require_observed, sigmoid, FactorModel,
    Factors, ModelKind, SolverOptions,
};
use crate::error::{Error, Result};
use crate::matrix::{validate_mask, BoolMatrix, DenseMatrix, MaskMatrix};

/// Consecutive objective increases treated as divergence.
const DIVERGENCE_RUN: usize = 20;

/// Trainable LMF parameters; logits are `WH + b_r 1ᵀ + 1 b_cᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmfParams {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    pub row_bias: Array1<f64>,
    pub col_bias: Array1<f64>,
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LmfParams {
    pub fn logits(&self) -> DenseMatrix {
        let mut z = self.w.dot(&self.h);
        for ((i, j), v) in z.indexed_iter_mut() {
            *v += self.row_bias[i] + self.col_bias[j];
        }
        z
    }

    /// Masked negative log-likelihood plus `λ/2` times the squared norms of
    /// all four parameter blocks.
    pub fn loss(&self, x: &DenseMatrix, mask: &MaskMatrix, lambda: f64) -> f64 {
        let z = self.logits();
        let nll = Zip::from(&z).and(x).and(mask).fold(0.0, |acc, &z, &y, &wt| {
            if wt == 0.0 {
                acc
            } else {
                // −[y log σ(z) + (1−y) log(1−σ(z))]
                acc + wt * (y * softplus(-z) + (1.0 - y) * softplus(z))
            }
        });
        let sq = |a: &DenseMatrix| a.iter().map(|v| v * v).sum::<f64>();
        let sqv = |a: &Array1<f64>| a.iter().map(|v| v * v).sum::<f64>();
        nll + 0.5 * lambda * (sq(&self.w) + sq(&self.h) + sqv(&self.row_bias) + sqv(&self.col_bias))
    }

    /// Gradient of [`LmfParams::loss`] with respect to every block.
    pub fn gradient(&self, x: &DenseMatrix, mask: &MaskMatrix, lambda: f64) -> LmfParams {
        let mut g = self.logits();
        Zip::from(&mut g).and(x).and(mask).for_each(|g, &y, &wt| {
            *g = wt * (sigmoid(*g) - y);
        });
        LmfParams {
            w: g.dot(&self.h.t()) + &(&self.w * lambda),
            h: self.w.t().dot(&g) + &(&self.h * lambda),
            row_bias: g.sum_axis(Axis(1)) + &(&self.row_bias * lambda),
            col_bias: g.sum_axis(Axis(0)) + &(&self.col_bias * lambda),
        }
    }

    fn step(&mut self, grad: &LmfParams, eta: f64) {
        self.w.scaled_add(-eta, &grad.w);
        self.h.scaled_add(-eta, &grad.h);
        self.row_bias.scaled_add(-eta, &grad.row_bias);
        self.col_bias.scaled_add(-eta, &grad.col_bias);
    }
}

/// Plain gradient descent on the masked logistic loss.
///
/// Fails with [`Error::Diverged`] when the loss rises twenty steps in a row
/// or stops being finite.
pub fn lmf(x: &BoolMatrix, mask: &MaskMatrix, k: usize, opts: &SolverOptions) -> Result<FactorModel> {
    opts.validate()?;
    validate_mask(mask, x.shape(), true)?;
    require_observed(mask)?;
    super::check_rank(x.shape(), k)?;
    let (n, m) = x.shape();
    let xd = x.to_dense();
    let (w, h) = init_factors(n, m, k, observed_mean(&xd, Some(mask)), &opts.seed);
    let mut params = LmfParams {
        w,
        h,
        row_bias: Array1::zeros(n),
        col_bias: Array1::zeros(m),
    };

    let mut trace = vec![params.loss(&xd, mask, opts.lambda)];
    let mut rising = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let grad = params.gradient(&xd, mask, opts.lambda);
        params.step(&grad, opts.eta);
        let obj = params.loss(&xd, mask, opts.lambda);
        let prev = *trace.last().expect("trace is seeded");
        trace.push(obj);
        if !obj.is_finite() {
            rising = DIVERGENCE_RUN;
        } else if obj > prev {
            rising += 1;
        } else {
            rising = 0;
        }
        if rising >= DIVERGENCE_RUN {
            return Err(Error::Diverged {
                iterations,
                last_objective: obj,
                trace,
            });
        }
        if relative_change(prev, obj) <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FactorModel {
        kind: ModelKind::Lmf,
        factors: Factors::Real {
            w: params.w,
            h: params.h,
        },
        row_bias: Some(params.row_bias),
        col_bias: Some(params.col_bias),
        global_offset: None,
        trace,
        iterations,
        converged,
        options: opts.clone(),
        thresholds: None,
        degenerate_components: vec![],
    })
}
