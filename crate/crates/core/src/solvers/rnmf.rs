//! NMF with row, column and global bias terms, fit on observed entries.

use ndarray::{Array1, Array2, Axis, Zip};

use super::{
    add_biases, check_rank, init_factors, observed_mean, relative_change, require_observed,
    FactorModel, Factors, ModelKind, SolverOptions,
};
use crate::error::Result;
use crate::matrix::{ensure_nonnegative, validate_mask, DenseMatrix, MaskMatrix};

/// Biased NMF: `X̂ = WH + b_W 1ᵀ + 1 b_Hᵀ + μ` with `μ` the observed mean.
///
/// Biases take a gradient step on the masked residual, with the step capped
/// at the inverse curvature of each bias so rows or columns with many
/// observations cannot overshoot. W and H then take masked multiplicative
/// steps against the current prediction. With `use_biases` off the biases
/// and `μ` stay at zero and the problem is regularized masked NMF.
pub fn rnmf(x: &DenseMatrix, mask: &MaskMatrix, k: usize, opts: &SolverOptions) -> Result<FactorModel> {
    opts.validate()?;
    validate_mask(mask, x.dim(), true)?;
    require_observed(mask)?;
    let x = Array2::from_shape_fn(x.dim(), |ij| if mask[ij] > 0.0 { x[ij] } else { 0.0 });
    ensure_nonnegative(&x, "X")?;
    check_rank(x.dim(), k)?;
    let (n, m) = x.dim();
    let mean = observed_mean(&x, Some(mask));
    let (mut w, mut h) = init_factors(n, m, k, mean, &opts.seed);
    let mu = if opts.use_biases { mean } else { 0.0 };
    let mut b_w = Array1::<f64>::zeros(n);
    let mut b_h = Array1::<f64>::zeros(m);
    let row_counts = mask.sum_axis(Axis(1));
    let col_counts = mask.sum_axis(Axis(0));
    let mx = &x * mask;

    let prediction = |w: &DenseMatrix, h: &DenseMatrix, b_w: &Array1<f64>, b_h: &Array1<f64>| {
        let mut p = w.dot(h);
        add_biases(&mut p, Some(b_w), Some(b_h), Some(mu));
        p
    };
    let objective = |xhat: &DenseMatrix, w: &DenseMatrix, h: &DenseMatrix, b_w: &Array1<f64>, b_h: &Array1<f64>| {
        let fit: f64 = Zip::from(&x)
            .and(xhat)
            .and(mask)
            .fold(0.0, |acc, &a, &b, &wt| acc + wt * (a - b) * (a - b));
        let sq = |a: &DenseMatrix| a.iter().map(|v| v * v).sum::<f64>();
        let sqv = |a: &Array1<f64>| a.iter().map(|v| v * v).sum::<f64>();
        fit + opts.alpha * sq(w) + opts.beta * sq(h) + opts.gamma * sqv(b_w) + opts.delta * sqv(b_h)
    };

    let mut xhat = prediction(&w, &h, &b_w, &b_h);
    let mut trace = vec![objective(&xhat, &w, &h, &b_w, &b_h)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        if opts.use_biases {
            let resid = (&x - &xhat) * mask;
            for i in 0..n {
                if row_counts[i] > 0.0 {
                    let step = opts.eta_w.min(1.0 / (row_counts[i] + opts.gamma));
                    b_w[i] += step * (resid.row(i).sum() - opts.gamma * b_w[i]);
                }
            }
            xhat = prediction(&w, &h, &b_w, &b_h);
            let resid = (&x - &xhat) * mask;
            for j in 0..m {
                if col_counts[j] > 0.0 {
                    let step = opts.eta_h.min(1.0 / (col_counts[j] + opts.delta));
                    b_h[j] += step * (resid.column(j).sum() - opts.delta * b_h[j]);
                }
            }
            xhat = prediction(&w, &h, &b_w, &b_h);
        }

        let num = mx.dot(&h.t());
        let den = (&xhat * mask).dot(&h.t()) + &(&w * opts.alpha);
        Zip::from(&mut w).and(&num).and(&den).for_each(|a, &p, &q| {
            *a *= p.max(0.0) / q.max(f64::MIN_POSITIVE);
        });
        xhat = prediction(&w, &h, &b_w, &b_h);
        let num = w.t().dot(&mx);
        let den = w.t().dot(&(&xhat * mask)) + &(&h * opts.beta);
        Zip::from(&mut h).and(&num).and(&den).for_each(|a, &p, &q| {
            *a *= p.max(0.0) / q.max(f64::MIN_POSITIVE);
        });
        xhat = prediction(&w, &h, &b_w, &b_h);

        let obj = objective(&xhat, &w, &h, &b_w, &b_h);
        let prev = *trace.last().expect("trace is seeded");
        trace.push(obj);
        if obj == 0.0 || relative_change(prev, obj) <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FactorModel {
        kind: ModelKind::Rnmf,
        factors: Factors::Real { w, h },
        row_bias: Some(b_w),
        col_bias: Some(b_h),
        global_offset: Some(mu),
        trace,
        iterations,
        converged,
        options: opts.clone(),
        thresholds: None,
        degenerate_components: vec![],
    })
}
