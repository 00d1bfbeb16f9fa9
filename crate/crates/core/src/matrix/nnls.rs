//! Column-wise non-negative least squares.

use ndarray::{Array1, Array2};

use super::{DenseMatrix, MaskMatrix};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;

#[derive(Clone, Copy, Debug)]
pub struct NnlsOptions {
    /// Cap on active-set changes per column.
    pub max_iters: usize,
    /// Optimality tolerance on the gradient, relative to the largest `|Wᵀx|`.
    pub tol: f64,
}

impl Default for NnlsOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-12,
        }
    }
}

/// Non-negative coefficients plus the rows forced to zero because their
/// basis column carried no signal.
#[derive(Clone, Debug)]
pub struct Regression {
    pub h: DenseMatrix,
    pub degenerate_rows: Vec<usize>,
}

/// Solves `min_{H ≥ 0} ‖X₊ − WH‖_F` column by column, where `X₊` is `X`
/// with negative entries clamped to zero.
pub fn nnls_regress(x: &DenseMatrix, w: &DenseMatrix, opts: NnlsOptions) -> Result<Regression> {
    regress(x, None, w, opts)
}

/// Weighted variant: each column minimizes `Σ_i M_ij (X_ij − (WH)_ij)²`.
pub fn nnls_regress_masked(
    x: &DenseMatrix,
    mask: &MaskMatrix,
    w: &DenseMatrix,
    opts: NnlsOptions,
) -> Result<Regression> {
    if mask.dim() != x.dim() {
        return Err(Error::Shape(format!(
            "mask {:?} vs X {:?}",
            mask.dim(),
            x.dim()
        )));
    }
    regress(x, Some(mask), w, opts)
}

fn regress(
    x: &DenseMatrix,
    mask: Option<&MaskMatrix>,
    w: &DenseMatrix,
    opts: NnlsOptions,
) -> Result<Regression> {
    if w.nrows() != x.nrows() {
        return Err(Error::Shape(format!(
            "W has {} rows, X has {}",
            w.nrows(),
            x.nrows()
        )));
    }
    let (n, m) = x.dim();
    let k = w.ncols();
    let degenerate_rows: Vec<usize> = (0..k)
        .filter(|&c| w.column(c).iter().all(|&v| v == 0.0))
        .collect();
    let live: Vec<usize> = (0..k).filter(|c| !degenerate_rows.contains(c)).collect();
    let mut h = Array2::zeros((k, m));
    if live.is_empty() {
        return Ok(Regression { h, degenerate_rows });
    }
    let wl = w.select(ndarray::Axis(1), &live);
    let shared_gram = mask.is_none().then(|| wl.t().dot(&wl));

    for j in 0..m {
        let mut gram = Array2::<f64>::zeros((live.len(), live.len()));
        let mut rhs = Array1::<f64>::zeros(live.len());
        for i in 0..n {
            let wt = mask.map_or(1.0, |mk| mk[[i, j]]);
            if wt == 0.0 {
                continue;
            }
            let xv = x[[i, j]].max(0.0);
            let row = wl.row(i);
            for a in 0..live.len() {
                rhs[a] += wt * row[a] * xv;
                if shared_gram.is_none() {
                    for b in 0..live.len() {
                        gram[[a, b]] += wt * row[a] * row[b];
                    }
                }
            }
        }
        let gram = shared_gram.clone().unwrap_or(gram);
        let coef = solve_column(&gram, &rhs, opts);
        for (a, &c) in live.iter().enumerate() {
            h[[c, j]] = coef[a];
        }
    }
    Ok(Regression { h, degenerate_rows })
}

/// Minimizes `hᵀGh − 2bᵀh` over `h ≥ 0` with the Lawson–Hanson active-set
/// method on the normal equations.
fn solve_column(gram: &Array2<f64>, rhs: &Array1<f64>, opts: NnlsOptions) -> Array1<f64> {
    let k = rhs.len();
    let mut h = Array1::<f64>::zeros(k);
    let scale = rhs.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if scale == 0.0 {
        return h;
    }
    let tol = opts.tol * scale;
    let mut passive = vec![false; k];
    for _ in 0..opts.max_iters {
        let grad = rhs - &gram.dot(&h);
        let entering = (0..k)
            .filter(|&c| !passive[c] && grad[c] > tol)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        let Some(t) = entering else { break };
        passive[t] = true;
        for _ in 0..=k {
            let idx: Vec<usize> = (0..k).filter(|&c| passive[c]).collect();
            let sub = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| gram[[idx[a], idx[b]]]);
            let sub_rhs = Array1::from_iter(idx.iter().map(|&c| rhs[c]));
            let Some(sol) = solve_spd(&sub, &sub_rhs) else {
                passive[t] = false;
                break;
            };
            if sol.iter().all(|&v| v > 0.0) {
                h.fill(0.0);
                for (a, &c) in idx.iter().enumerate() {
                    h[c] = sol[a];
                }
                break;
            }
            // Step toward the subproblem solution until a coordinate hits zero.
            let mut alpha = 1.0f64;
            for (a, &c) in idx.iter().enumerate() {
                if sol[a] <= 0.0 {
                    alpha = alpha.min(h[c] / (h[c] - sol[a]));
                }
            }
            for (a, &c) in idx.iter().enumerate() {
                h[c] += alpha * (sol[a] - h[c]);
                if h[c] <= 0.0 || (sol[a] <= 0.0 && h[c] <= 1e-15 * scale) {
                    h[c] = 0.0;
                    passive[c] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::RandomSource;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut r = RandomSource::new(seed).rng();
        DenseMatrix::from_shape_fn((rows, cols), |_| r.random::<f64>())
    }

    fn objective(x: &DenseMatrix, w: &DenseMatrix, h: &DenseMatrix) -> f64 {
        (x - &w.dot(h)).iter().map(|v| v * v).sum()
    }

    /// Projected gradient with exact-Lipschitz step, run far past convergence.
    fn projected_gradient(x: &DenseMatrix, w: &DenseMatrix) -> DenseMatrix {
        let gram = w.t().dot(w);
        let lipschitz: f64 = gram.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step = 1.0 / lipschitz;
        let wtx = w.t().dot(x);
        let mut h = DenseMatrix::zeros((w.ncols(), x.ncols()));
        for _ in 0..200_000 {
            let grad = gram.dot(&h) - &wtx;
            h = (&h - &(grad * step)).mapv(|v| v.max(0.0));
        }
        h
    }

    #[test]
    fn recovers_consistent_coefficients() {
        let w = random(10, 3, 1) + DenseMatrix::eye(10).slice(ndarray::s![.., 0..3]).to_owned();
        let h0 = random(3, 6, 2);
        let x = w.dot(&h0);
        let reg = nnls_regress(&x, &w, NnlsOptions::default()).unwrap();
        for (a, b) in reg.h.iter().zip(h0.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn negative_target_gives_zero() {
        let w = random(6, 2, 3);
        let x = -w.dot(&random(2, 4, 4));
        let reg = nnls_regress(&x, &w, NnlsOptions::default()).unwrap();
        assert!(reg.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_projected_gradient_objective() {
        for seed in 0..5 {
            let w = random(8, 3, 10 + seed);
            let x = random(8, 4, 20 + seed);
            let reg = nnls_regress(&x, &w, NnlsOptions::default()).unwrap();
            let oracle = projected_gradient(&x, &w);
            let got = objective(&x, &w, &reg.h);
            let want = objective(&x, &w, &oracle);
            assert!((got - want).abs() < 1e-8, "seed {seed}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_basis_column_is_flagged() {
        let mut w = random(5, 3, 7);
        w.column_mut(1).fill(0.0);
        let x = random(5, 4, 8);
        let reg = nnls_regress(&x, &w, NnlsOptions::default()).unwrap();
        assert_eq!(reg.degenerate_rows, vec![1]);
        assert!(reg.h.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_regression_ignores_unobserved_entries() {
        let w = random(8, 2, 1);
        let h0 = random(2, 5, 2);
        let mut x = w.dot(&h0);
        let mut mask = MaskMatrix::ones((8, 5));
        mask[[0, 0]] = 0.0;
        mask[[3, 2]] = 0.0;
        x[[0, 0]] = 100.0;
        x[[3, 2]] = 50.0;
        let reg = nnls_regress_masked(&x, &mask, &w, NnlsOptions::default()).unwrap();
        for (a, b) in reg.h.iter().zip(h0.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn nonnegative_and_no_worse_than_zero(seed in 0u64..500) {
            let w = random(7, 3, seed);
            let x = random(7, 4, seed + 1) - 0.3;
            let reg = nnls_regress(&x, &w, NnlsOptions::default()).unwrap();
            prop_assert!(reg.h.iter().all(|&v| v >= 0.0));
            let xc = x.mapv(|v| v.max(0.0));
            let zero = DenseMatrix::zeros(reg.h.dim());
            prop_assert!(objective(&xc, &w, &reg.h) <= objective(&xc, &w, &zero) + 1e-12);
        }
    }
}
