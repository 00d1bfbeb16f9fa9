//! Boolean NMF: real multiplicative updates with adaptive thresholding.

use ndarray::Zip;

use super::{
    check_rank, init_factors, observed_mean, relative_change, require_observed, FactorModel,
    Factors, ModelKind, SolverOptions,
};
use crate::boolean::{
    binarize_factors, boolean_error, search_thresholds_masked, Binarized, Binarizer, Thresholder,
};
use crate::error::Result;
use crate::matrix::{validate_mask, BoolMatrix, DenseMatrix, MaskMatrix};

/// Boolean factorization of `X ≈ W ⊗_B H`.
///
/// Real factors follow multiplicative updates for
/// `½‖M ⊙ (X − WH)‖² + α ΣW + β ΣH`. After every sweep they are binarized
/// with the chosen rule and the Boolean pair with the lowest masked
/// reconstruction error is kept. The `search` rule is too costly per sweep,
/// so sweeps use two-means and the search refines the final real factors.
/// `uniform` skips thresholding and returns the real factors.
///
/// A missing mask means every entry is observed.
pub fn bnmf(
    x: &BoolMatrix,
    mask: Option<&MaskMatrix>,
    k: usize,
    thresholder: Thresholder,
    opts: &SolverOptions,
) -> Result<FactorModel> {
    opts.validate()?;
    check_rank(x.shape(), k)?;
    let (n, m) = x.shape();
    let ones;
    let mask = match mask {
        Some(mk) => {
            validate_mask(mk, (n, m), true)?;
            require_observed(mk)?;
            mk
        }
        None => {
            ones = DenseMatrix::ones((n, m));
            &ones
        }
    };
    let xd = x.to_dense();
    let mx = &xd * mask;
    let (mut w, mut h) = init_factors(n, m, k, observed_mean(&xd, Some(mask)), &opts.seed);

    let objective = |w: &DenseMatrix, h: &DenseMatrix, wh: &DenseMatrix| {
        let fit = Zip::from(&xd)
            .and(wh)
            .and(mask)
            .fold(0.0, |acc, &a, &b, &wt| acc + wt * (a - b) * (a - b));
        0.5 * fit + opts.alpha * w.sum() + opts.beta * h.sum()
    };
    let sweep_rule = match thresholder {
        Thresholder::Otsu => Some(Binarizer::Otsu),
        Thresholder::KMeans | Thresholder::Search => Some(Binarizer::KMeans),
        Thresholder::Uniform => None,
    };
    let mut best: Option<(f64, Binarized)> = None;
    let consider = |w: &DenseMatrix, h: &DenseMatrix, best: &mut Option<(f64, Binarized)>| -> Result<()> {
        if let Some(rule) = sweep_rule {
            let b = binarize_factors(w, h, rule)?;
            let err = boolean_error(x, Some(mask), &b.w, &b.h);
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                *best = Some((err, b));
            }
        }
        Ok(())
    };

    let mut wh = w.dot(&h);
    let mut trace = vec![objective(&w, &h, &wh)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let num = mx.dot(&h.t());
        let den = (&wh * mask).dot(&h.t());
        Zip::from(&mut w).and(&num).and(&den).for_each(|a, &p, &q| {
            *a *= p / (q + opts.alpha).max(f64::MIN_POSITIVE);
        });
        wh = w.dot(&h);
        let num = w.t().dot(&mx);
        let den = w.t().dot(&(&wh * mask));
        Zip::from(&mut h).and(&num).and(&den).for_each(|a, &p, &q| {
            *a *= p / (q + opts.beta).max(f64::MIN_POSITIVE);
        });
        wh = w.dot(&h);
        consider(&w, &h, &mut best)?;

        let obj = objective(&w, &h, &wh);
        let prev = *trace.last().expect("trace is seeded");
        trace.push(obj);
        if best.as_ref().is_some_and(|(e, _)| *e == 0.0) || obj == 0.0 || relative_change(prev, obj) <= opts.tol {
            converged = true;
            break;
        }
    }

    if thresholder == Thresholder::Search {
        let res = search_thresholds_masked(x, Some(mask), &w, &h, opts.search_sweeps)?;
        if best.as_ref().is_none_or(|(e, _)| res.error() < *e) {
            let mut b = crate::boolean::apply_thresholds(&w, &h, &res.thresholds)?;
            b.degenerate_components.extend(res.degenerate_components.iter().copied());
            b.degenerate_components.sort_unstable();
            b.degenerate_components.dedup();
            best = Some((res.error(), b));
        }
    }

    let (factors, thresholds, degenerate_components) = match best {
        Some((_, b)) => (
            Factors::Boolean { w: b.w, h: b.h },
            Some(b.thresholds),
            b.degenerate_components,
        ),
        None => (Factors::Real { w, h }, None, vec![]),
    };
    Ok(FactorModel {
        kind: ModelKind::Bnmf,
        factors,
        row_bias: None,
        col_bias: None,
        global_offset: None,
        trace,
        iterations,
        converged,
        options: opts.clone(),
        thresholds,
        degenerate_components,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{boolean_matmul, RandomSource};
    use rand::Rng;

    #[test]
    fn recovers_a_single_block() {
        let rows = [true, false, true, true, false, false, true];
        let cols = [false, true, true, false, true, false];
        let x = BoolMatrix::from_fn(7, 6, |i, j| rows[i] && cols[j]);
        let model = bnmf(&x, None, 1, Thresholder::KMeans, &SolverOptions::default()).unwrap();
        let Factors::Boolean { w, h } = &model.factors else {
            panic!("expected Boolean factors");
        };
        assert_eq!(boolean_matmul(w, h).unwrap(), x);
        assert_eq!(w.column(0), rows.to_vec());
        assert_eq!(h.row(0), cols.to_vec());
    }

    #[test]
    fn uniform_returns_real_factors() {
        let mut r = RandomSource::new(2).rng();
        let x = BoolMatrix::from_fn(10, 8, |_, _| r.random::<f64>() < 0.4);
        let model = bnmf(&x, None, 2, Thresholder::Uniform, &SolverOptions::default()).unwrap();
        assert!(!model.factors.is_boolean());
        assert!(model.factors.w().iter().any(|&v| v != 0.0 && v != 1.0));
    }

    #[test]
    fn search_is_no_worse_than_kmeans() {
        for seed in 0..5 {
            let mut r = RandomSource::new(seed).rng();
            let x = BoolMatrix::from_fn(15, 12, |_, _| r.random::<f64>() < 0.3);
            let opts = SolverOptions::default().with_seed(RandomSource::new(seed));
            let err = |t| {
                let model = bnmf(&x, None, 3, t, &opts).unwrap();
                let Factors::Boolean { w, h } = &model.factors else {
                    unreachable!()
                };
                boolean_error(&x, None, w, h)
            };
            assert!(err(Thresholder::Search) <= err(Thresholder::KMeans));
        }
    }

    #[test]
    fn masked_entries_do_not_matter() {
        let mut r = RandomSource::new(5).rng();
        let x = BoolMatrix::from_fn(9, 9, |_, _| r.random::<f64>() < 0.5);
        let mut mask = DenseMatrix::ones((9, 9));
        mask[[4, 4]] = 0.0;
        let mut y = x.clone();
        y.set(4, 4, !x.get(4, 4));
        let opts = SolverOptions::default();
        let a = bnmf(&x, Some(&mask), 2, Thresholder::Otsu, &opts).unwrap();
        let b = bnmf(&y, Some(&mask), 2, Thresholder::Otsu, &opts).unwrap();
        assert_eq!(a.factors, b.factors);
    }
}
