//! Plain multiplicative-update NMF and masked, regularized HALS NMF.

use ndarray::Array2;

use super::{
    check_rank, init_factors, observed_mean, relative_change, require_observed, FactorModel,
    Factors, ModelKind, SolverOptions,
};
use crate::error::Result;
use crate::matrix::{ensure_finite, ensure_nonnegative, validate_mask, DenseMatrix, MaskMatrix};

/// Lee–Seung multiplicative updates for `min ‖X − WH‖²_F`, `W, H ≥ 0`.
pub fn nmf_mu(x: &DenseMatrix, k: usize, opts: &SolverOptions) -> Result<FactorModel> {
    opts.validate()?;
    ensure_finite(x, "X")?;
    ensure_nonnegative(x, "X")?;
    check_rank(x.dim(), k)?;
    let (n, m) = x.dim();
    let (mut w, mut h) = init_factors(n, m, k, observed_mean(x, None), &opts.seed);

    let objective = |w: &DenseMatrix, h: &DenseMatrix| {
        let wh = w.dot(h);
        x.iter().zip(wh.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    };
    let mut trace = vec![objective(&w, &h)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let num = w.t().dot(x);
        let den = w.t().dot(&w).dot(&h);
        h.zip_mut_with(&(num / den.mapv(|d| d.max(f64::MIN_POSITIVE))), |a, r| *a *= r);
        let num = x.dot(&h.t());
        let den = w.dot(&h.dot(&h.t()));
        w.zip_mut_with(&(num / den.mapv(|d| d.max(f64::MIN_POSITIVE))), |a, r| *a *= r);

        let obj = objective(&w, &h);
        let prev = *trace.last().expect("trace is seeded");
        trace.push(obj);
        if obj == 0.0 || relative_change(prev, obj) <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FactorModel {
        kind: ModelKind::Nmf,
        factors: Factors::Real { w, h },
        row_bias: None,
        col_bias: None,
        global_offset: None,
        trace,
        iterations,
        converged,
        options: opts.clone(),
        thresholds: None,
        degenerate_components: vec![],
    })
}

/// Weighted NMF: `min ‖M ⊙ (X − WH)‖²_F + λ(‖W‖²_F + ‖H‖²_F)` by masked HALS.
///
/// Each component is refit against the partial residual with the other
/// components held fixed, first its W column and then its H row. Every
/// such step is an exact non-negative minimization, so the objective never
/// rises. Entries with zero weight are never read.
///
/// Fractional weights are accepted; they enter the objective linearly.
pub fn wnmf(x: &DenseMatrix, mask: &MaskMatrix, k: usize, opts: &SolverOptions) -> Result<FactorModel> {
    opts.validate()?;
    validate_mask(mask, x.dim(), true)?;
    require_observed(mask)?;
    // Unobserved entries are zeroed up front so nothing downstream can see them.
    let x = Array2::from_shape_fn(x.dim(), |ij| if mask[ij] > 0.0 { x[ij] } else { 0.0 });
    ensure_finite(&x, "X")?;
    ensure_nonnegative(&x, "X")?;
    check_rank(x.dim(), k)?;
    let (n, m) = x.dim();
    let (w0, h0) = init_factors(n, m, k, observed_mean(&x, Some(mask)), &opts.seed);

    let mut state = Hals {
        n,
        m,
        k,
        lambda: opts.lambda,
        x: x.iter().copied().collect(),
        mask: mask.iter().copied().collect(),
        w: w0.iter().copied().collect(),
        h: h0.iter().copied().collect(),
        r: vec![0.0; n * m],
    };
    state.refresh_residual();
    let mut trace = vec![state.objective()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        state.sweep();
        state.refresh_residual();
        let obj = state.objective();
        let prev = *trace.last().expect("trace is seeded");
        trace.push(obj);
        if obj == 0.0 || relative_change(prev, obj) <= opts.tol {
            converged = true;
            break;
        }
    }
    let w = Array2::from_shape_vec((n, k), state.w).expect("shape");
    let h = Array2::from_shape_vec((k, m), state.h).expect("shape");
    Ok(FactorModel {
        kind: ModelKind::Wnmf,
        factors: Factors::Real { w, h },
        row_bias: None,
        col_bias: None,
        global_offset: None,
        trace,
        iterations,
        converged,
        options: opts.clone(),
        thresholds: None,
        degenerate_components: vec![],
    })
}

/// Row-major working buffers for masked HALS.
struct Hals {
    n: usize,
    m: usize,
    k: usize,
    lambda: f64,
    x: Vec<f64>,
    mask: Vec<f64>,
    w: Vec<f64>,
    h: Vec<f64>,
    /// `X − WH` on observed entries, zero elsewhere.
    r: Vec<f64>,
}

impl Hals {
    fn refresh_residual(&mut self) {
        let (m, k) = (self.m, self.k);
        for i in 0..self.n {
            let wi = &self.w[i * k..(i + 1) * k];
            for j in 0..m {
                let idx = i * m + j;
                self.r[idx] = if self.mask[idx] > 0.0 {
                    let mut v = self.x[idx];
                    for (c, &wc) in wi.iter().enumerate() {
                        v -= wc * self.h[c * m + j];
                    }
                    v
                } else {
                    0.0
                };
            }
        }
    }

    fn objective(&self) -> f64 {
        let fit: f64 = self.r.iter().zip(&self.mask).map(|(r, w)| w * r * r).sum();
        let reg: f64 = self.w.iter().chain(&self.h).map(|v| v * v).sum();
        fit + self.lambda * reg
    }

    /// Adds `sign · W_c H_c` to the residual on observed entries.
    fn shift_residual(&mut self, c: usize, sign: f64) {
        let (m, k) = (self.m, self.k);
        let hc = &self.h[c * m..(c + 1) * m];
        for i in 0..self.n {
            let wic = sign * self.w[i * k + c];
            if wic == 0.0 {
                continue;
            }
            let row = &mut self.r[i * m..(i + 1) * m];
            let mrow = &self.mask[i * m..(i + 1) * m];
            for j in 0..m {
                if mrow[j] > 0.0 {
                    row[j] += wic * hc[j];
                }
            }
        }
    }

    fn sweep(&mut self) {
        let (n, m, k) = (self.n, self.m, self.k);
        let mut num_h = vec![0.0; m];
        let mut den_h = vec![0.0; m];
        for c in 0..k {
            self.shift_residual(c, 1.0);

            for i in 0..n {
                let row = &self.r[i * m..(i + 1) * m];
                let mrow = &self.mask[i * m..(i + 1) * m];
                let hc = &self.h[c * m..(c + 1) * m];
                let (mut num, mut den) = (0.0, self.lambda);
                for j in 0..m {
                    let mh = mrow[j] * hc[j];
                    num += mh * row[j];
                    den += mh * hc[j];
                }
                self.w[i * k + c] = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
            }

            num_h.fill(0.0);
            den_h.fill(self.lambda);
            for i in 0..n {
                let wic = self.w[i * k + c];
                if wic == 0.0 {
                    continue;
                }
                let row = &self.r[i * m..(i + 1) * m];
                let mrow = &self.mask[i * m..(i + 1) * m];
                for j in 0..m {
                    let mw = mrow[j] * wic;
                    num_h[j] += mw * row[j];
                    den_h[j] += mw * wic;
                }
            }
            for j in 0..m {
                self.h[c * m + j] = if den_h[j] > 0.0 { (num_h[j] / den_h[j]).max(0.0) } else { 0.0 };
            }

            self.shift_residual(c, -1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{relative_error, RandomSource};
    use crate::solvers::predict;
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut r = RandomSource::new(seed).rng();
        Array2::from_shape_fn((rows, cols), |_| r.random::<f64>())
    }

    fn tight() -> SolverOptions {
        SolverOptions {
            max_iters: 20_000,
            tol: 1e-14,
            lambda: 0.0,
            ..Default::default()
        }
    }

    fn factors(model: &FactorModel) -> (DenseMatrix, DenseMatrix) {
        (model.factors.w(), model.factors.h())
    }

    #[test]
    fn nmf_recovers_exact_rank_two() {
        let x = uniform(6, 2, 1).dot(&uniform(2, 6, 2));
        let model = nmf_mu(&x, 2, &tight()).unwrap();
        let (w, h) = factors(&model);
        assert!(relative_error(&x, &w, &h).unwrap() <= 1e-6);
    }

    #[test]
    fn nmf_recovers_identity() {
        let x = DenseMatrix::eye(3);
        let model = nmf_mu(&x, 3, &tight()).unwrap();
        let (w, h) = factors(&model);
        assert!(relative_error(&x, &w, &h).unwrap() <= 1e-6);
    }

    #[test]
    fn nmf_trace_monotone() {
        for seed in 0..10 {
            let x = uniform(10, 8, seed);
            let opts = SolverOptions::default().with_seed(RandomSource::new(seed));
            let model = nmf_mu(&x, 2, &opts).unwrap();
            for pair in model.trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-9);
            }
        }
    }

    #[test]
    fn nmf_rejects_negative_input_and_bad_rank() {
        let mut x = uniform(4, 4, 0);
        assert!(nmf_mu(&x, 0, &SolverOptions::default()).is_err());
        assert!(nmf_mu(&x, 5, &SolverOptions::default()).is_err());
        x[[1, 1]] = -0.5;
        assert!(nmf_mu(&x, 2, &SolverOptions::default()).is_err());
    }

    #[test]
    fn wnmf_full_mask_matches_nmf_objective() {
        let x = uniform(8, 3, 3).dot(&uniform(3, 7, 4));
        let mask = DenseMatrix::ones(x.dim());
        let a = nmf_mu(&x, 3, &tight()).unwrap().final_objective();
        let b = wnmf(&x, &mask, 3, &tight()).unwrap().final_objective();
        let scale = x.iter().map(|v| v * v).sum::<f64>();
        assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
    }

    #[test]
    fn wnmf_recovers_masked_entries() {
        let mut errs = Vec::new();
        for seed in 0..10 {
            let x = uniform(30, 2, seed).dot(&uniform(2, 25, seed + 100));
            let mut r = RandomSource::new(seed + 200).rng();
            let mask = Array2::from_shape_fn(x.dim(), |_| if r.random::<f64>() < 0.1 { 0.0 } else { 1.0 });
            let opts = SolverOptions {
                lambda: 0.0,
                tol: 1e-10,
                max_iters: 5000,
                seed: RandomSource::new(seed),
                ..Default::default()
            };
            let xhat = predict(&wnmf(&x, &mask, 2, &opts).unwrap());
            let held: Vec<f64> = x
                .indexed_iter()
                .filter(|(ij, _)| mask[*ij] == 0.0)
                .map(|(ij, &v)| (xhat[ij] - v).abs() / v)
                .collect();
            errs.push(held.iter().sum::<f64>() / held.len() as f64);
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!(mean <= 0.1, "mean held-out relative error {mean}");
    }

    #[test]
    fn wnmf_ignores_masked_values_exactly() {
        let x = uniform(9, 6, 5);
        let mut mask = DenseMatrix::ones(x.dim());
        mask[[2, 3]] = 0.0;
        let mut y = x.clone();
        y[[2, 3]] = 1e6;
        let opts = SolverOptions::default();
        let a = wnmf(&x, &mask, 2, &opts).unwrap();
        let b = wnmf(&y, &mask, 2, &opts).unwrap();
        assert_eq!(a.factors, b.factors);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn wnmf_rejects_empty_mask() {
        let x = uniform(4, 4, 0);
        assert!(wnmf(&x, &DenseMatrix::zeros((4, 4)), 2, &SolverOptions::default()).is_err());
        assert!(wnmf(&x, &DenseMatrix::ones((3, 4)), 2, &SolverOptions::default()).is_err());
    }

    #[test]
    fn solvers_are_deterministic() {
        let x = uniform(12, 9, 6);
        let mask = DenseMatrix::ones(x.dim());
        let opts = SolverOptions::default().with_seed(RandomSource::new(77));
        assert_eq!(nmf_mu(&x, 3, &opts).unwrap(), nmf_mu(&x, 3, &opts).unwrap());
        assert_eq!(wnmf(&x, &mask, 3, &opts).unwrap(), wnmf(&x, &mask, 3, &opts).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn wnmf_objective_non_increasing(seed in 0u64..10_000, k in 1usize..4) {
            let x = uniform(10, 8, seed);
            let mut r = RandomSource::new(seed ^ 0xabc).rng();
            let mask = Array2::from_shape_fn(x.dim(), |_| if r.random::<f64>() < 0.3 { 0.0 } else { 1.0 });
            let opts = SolverOptions { max_iters: 200, ..Default::default() }.with_seed(RandomSource::new(seed));
            let model = wnmf(&x, &mask, k, &opts).unwrap();
            for pair in model.trace.windows(2) {
                prop_assert!(pair[1] <= pair[0] + 1e-9);
            }
            prop_assert!(model.factors.w().iter().all(|&v| v >= 0.0));
            prop_assert!(model.factors.h().iter().all(|&v| v >= 0.0));
        }
    }
}
