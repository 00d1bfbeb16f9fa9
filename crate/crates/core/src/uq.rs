//! Ensemble uncertainty, abstention and the LMF bias combiner.

use ndarray::Zip;

use crate::error::{Error, Result};
use crate::matrix::{median, BoolMatrix, DenseMatrix, MaskMatrix};
use crate::solvers::{lmf, predict, sigmoid, FactorModel, SolverOptions};

/// Matrix position `(row, col)`.
pub type Index = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMatrix {
    /// Per-entry population standard deviation across the ensemble.
    pub u: DenseMatrix,
    pub mean_prediction: DenseMatrix,
    pub perturbations: usize,
}

impl UncertaintyMatrix {
    /// `row,col,u` for every entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,u\n");
        for ((i, j), v) in self.u.indexed_iter() {
            out.push_str(&format!("{i},{j},{v:?}\n"));
        }
        out
    }
}

/// Standard deviation (dividing by `P`) and mean of `P ≥ 2` reconstructions.
pub fn uncertainty_matrix(reconstructions: &[DenseMatrix]) -> Result<UncertaintyMatrix> {
    let p = reconstructions.len();
    if p < 2 {
        return Err(Error::Input(format!("uncertainty needs at least 2 reconstructions, got {p}")));
    }
    let shape = reconstructions[0].dim();
    if reconstructions.iter().any(|r| r.dim() != shape) {
        return Err(Error::Shape("reconstructions differ in shape".into()));
    }
    let pf = p as f64;
    let mut mean = DenseMatrix::zeros(shape);
    for r in reconstructions {
        mean += r;
    }
    mean /= pf;
    let mut var = DenseMatrix::zeros(shape);
    for r in reconstructions {
        Zip::from(&mut var).and(r).and(&mean).for_each(|v, &a, &b| *v += (a - b) * (a - b));
    }
    Ok(UncertaintyMatrix {
        u: var.mapv(|v| (v / pf).sqrt()),
        mean_prediction: mean,
        perturbations: p,
    })
}

/// Positions where `mask` is positive (or zero, with `observed = false`).
pub fn mask_indices(mask: &MaskMatrix, observed: bool) -> Vec<Index> {
    mask.indexed_iter()
        .filter(|(_, &v)| (v > 0.0) == observed)
        .map(|(ij, _)| ij)
        .collect()
}

fn check_indices(u: &DenseMatrix, idx: &[Index]) -> Result<()> {
    let (n, m) = u.dim();
    if let Some(&(i, j)) = idx.iter().find(|&&(i, j)| i >= n || j >= m) {
        return Err(Error::Shape(format!("index ({i}, {j}) outside {n}×{m}")));
    }
    Ok(())
}

/// `τ`: mean uncertainty over the training positions.
pub fn abstention_threshold(u: &DenseMatrix, train: &[Index]) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::Input("abstention threshold needs training indices".into()));
    }
    check_indices(u, train)?;
    Ok(train.iter().map(|&ij| u[ij]).sum::<f64>() / train.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbstentionDecision {
    pub tau: f64,
    /// Test positions whose uncertainty strictly exceeds `tau`.
    pub abstained: Vec<Index>,
    pub fraction_abstained: f64,
}

impl AbstentionDecision {
    /// `row,col,u,abstained` for every test position.
    pub fn to_csv(&self, u: &DenseMatrix, test: &[Index]) -> String {
        let set: std::collections::HashSet<&Index> = self.abstained.iter().collect();
        let mut out = String::from("row,col,u,abstained\n");
        for ij in test {
            out.push_str(&format!("{},{},{:?},{}\n", ij.0, ij.1, u[*ij], u8::from(set.contains(ij))));
        }
        out
    }
}

/// Abstains on every test position with `U > τ`.
pub fn abstain(u: &DenseMatrix, tau: f64, test: &[Index]) -> Result<AbstentionDecision> {
    check_indices(u, test)?;
    let abstained: Vec<Index> = test.iter().copied().filter(|&ij| u[ij] > tau).collect();
    let fraction_abstained = if test.is_empty() {
        0.0
    } else {
        abstained.len() as f64 / test.len() as f64
    };
    Ok(AbstentionDecision {
        tau,
        abstained,
        fraction_abstained,
    })
}

/// Per-test-position sample weights `1 / (1 + U / (1 + median_train(U)))`.
pub fn uq_weights(u: &DenseMatrix, train: &[Index], test: &[Index]) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::Input("UQ weights need training indices".into()));
    }
    check_indices(u, train)?;
    check_indices(u, test)?;
    let mut train_u: Vec<f64> = train.iter().map(|&ij| u[ij]).collect();
    let scale = 1.0 + median(&mut train_u);
    Ok(test.iter().map(|&ij| 1.0 / (1.0 + u[ij] / scale)).collect())
}

/// `σ(X̂ + b_r 1ᵀ + 1 b_cᵀ)`, kept strictly inside `(0, 1)`.
pub fn combine_with_biases(base: &DenseMatrix, row_bias: &[f64], col_bias: &[f64]) -> Result<DenseMatrix> {
    if row_bias.len() != base.nrows() || col_bias.len() != base.ncols() {
        return Err(Error::Shape("bias lengths do not match the prediction".into()));
    }
    let hi = 1.0 - f64::EPSILON / 2.0;
    Ok(DenseMatrix::from_shape_fn(base.dim(), |(i, j)| {
        sigmoid(base[[i, j]] + row_bias[i] + col_bias[j]).clamp(f64::MIN_POSITIVE, hi)
    }))
}

#[derive(Clone, Debug)]
pub struct EnsemblePrediction {
    pub probabilities: DenseMatrix,
    /// The LMF fit whose biases were used.
    pub lmf: FactorModel,
}

/// Trains LMF at `k` and adds only its biases to the base reconstruction.
pub fn lmf_ensemble_predict(
    x: &BoolMatrix,
    mask: &MaskMatrix,
    base: &FactorModel,
    k: usize,
    opts: &SolverOptions,
) -> Result<EnsemblePrediction> {
    lmf_ensemble_from_prediction(x, mask, &predict(base), k, opts)
}

/// As [`lmf_ensemble_predict`] with the base reconstruction given directly.
pub fn lmf_ensemble_from_prediction(
    x: &BoolMatrix,
    mask: &MaskMatrix,
    base: &DenseMatrix,
    k: usize,
    opts: &SolverOptions,
) -> Result<EnsemblePrediction> {
    if base.dim() != x.shape() {
        return Err(Error::Shape("base prediction does not match X".into()));
    }
    let model = lmf(x, mask, k, opts)?;
    let rb = model.row_bias.as_ref().expect("lmf has biases").to_vec();
    let cb = model.col_bias.as_ref().expect("lmf has biases").to_vec();
    Ok(EnsemblePrediction {
        probabilities: combine_with_biases(base, &rb, &cb)?,
        lmf: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::RandomSource;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn random_stack(p: usize, seed: u64) -> Vec<DenseMatrix> {
        let mut r = RandomSource::new(seed).rng();
        (0..p)
            .map(|_| DenseMatrix::from_shape_fn((4, 5), |_| r.random::<f64>() * 3.0))
            .collect()
    }

    #[test]
    fn identical_slices_have_zero_uncertainty() {
        let s = vec![array![[1.0, 2.0], [3.0, 4.0]]; 3];
        let u = uncertainty_matrix(&s).unwrap();
        assert!(u.u.iter().all(|&v| v == 0.0));
        assert_eq!(u.mean_prediction, s[0]);
    }

    #[test]
    fn population_std() {
        let u = uncertainty_matrix(&[array![[0.0]], array![[2.0]]]).unwrap();
        assert_eq!(u.u[[0, 0]], 1.0);
        assert!(uncertainty_matrix(&[array![[0.0]]]).is_err());
    }

    #[test]
    fn std_matches_two_pass_oracle() {
        let stack = random_stack(7, 1);
        let got = uncertainty_matrix(&stack).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let vals: Vec<f64> = stack.iter().map(|s| s[[i, j]]).collect();
                let mean = vals.iter().sum::<f64>() / 7.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
                assert!((got.u[[i, j]] - var.sqrt()).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn threshold_examples() {
        let u = DenseMatrix::from_elem((3, 3), 0.7);
        assert_eq!(abstention_threshold(&u, &[(0, 0), (1, 2)]).unwrap(), 0.7);
        let u = array![[0.0, 2.0], [5.0, 5.0]];
        assert_eq!(abstention_threshold(&u, &[(0, 0), (0, 1)]).unwrap(), 1.0);
        assert!(abstention_threshold(&u, &[]).is_err());
    }

    #[test]
    fn threshold_matches_direct_average() {
        let mut r = RandomSource::new(4).rng();
        let u = DenseMatrix::from_shape_fn((6, 6), |_| r.random::<f64>());
        let idx: Vec<Index> = (0..10).map(|_| (r.random_range(0..6), r.random_range(0..6))).collect();
        let direct: f64 = idx.iter().map(|&ij| u[ij]).sum::<f64>() / 10.0;
        assert!((abstention_threshold(&u, &idx).unwrap() - direct).abs() <= 1e-15);
    }

    #[test]
    fn abstention_is_strict() {
        let u = array![[0.5, 1.0], [1.5, 0.2]];
        let test = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        let d = abstain(&u, 1.0, &test).unwrap();
        assert_eq!(d.abstained, vec![(1, 0)]);
        assert_eq!(d.fraction_abstained, 0.25);
        let none = abstain(&u, 2.0, &test).unwrap();
        assert!(none.abstained.is_empty());
        assert_eq!(none.fraction_abstained, 0.0);
        assert!(d.to_csv(&u, &test).contains("1,0,1.5,1"));
    }

    #[test]
    fn weight_examples() {
        let zero = DenseMatrix::zeros((2, 2));
        assert_eq!(uq_weights(&zero, &[(0, 0)], &[(1, 1), (0, 1)]).unwrap(), vec![1.0, 1.0]);
        let u = array![[0.0, 2.0], [2.0, 2.0]];
        // Train median 1 from {0, 2}.
        let w = uq_weights(&u, &[(0, 0), (0, 1)], &[(1, 0)]).unwrap();
        assert_eq!(w, vec![0.5]);
    }

    #[test]
    fn weights_match_formula() {
        let mut r = RandomSource::new(8).rng();
        let u = DenseMatrix::from_shape_fn((5, 5), |_| r.random::<f64>());
        let train: Vec<Index> = (0..5).map(|i| (i, i)).collect();
        let test: Vec<Index> = (0..5).map(|i| (i, (i + 1) % 5)).collect();
        let mut tu: Vec<f64> = train.iter().map(|&ij| u[ij]).collect();
        tu.sort_by(|a, b| a.total_cmp(b));
        let med = tu[2];
        let got = uq_weights(&u, &train, &test).unwrap();
        for (g, &ij) in got.iter().zip(&test) {
            let w = u[ij] / (1.0 + med);
            assert!((g - 1.0 / (1.0 + w)).abs() <= 1e-12);
        }
    }

    #[test]
    fn combiner_examples() {
        let base = array![[0.3, -1.0], [2.0, 0.0]];
        let pure = combine_with_biases(&base, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(pure, base.mapv(sigmoid));
        let zero = DenseMatrix::zeros((2, 2));
        let biased = combine_with_biases(&zero, &[1.0, -1.0], &[0.5, 0.0]).unwrap();
        assert_eq!(biased[[0, 0]], sigmoid(1.5));
        assert_eq!(biased[[1, 1]], sigmoid(-1.0));
        let extreme = combine_with_biases(&array![[1e3, -1e3]], &[0.0], &[0.0, 0.0]).unwrap();
        assert!(extreme.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    proptest! {
        #[test]
        fn uncertainty_ignores_slice_order(seed in 0u64..1000) {
            let mut stack = random_stack(5, seed);
            let a = uncertainty_matrix(&stack).unwrap();
            stack.shuffle(&mut RandomSource::new(seed + 1).rng());
            let b = uncertainty_matrix(&stack).unwrap();
            for (x, y) in a.u.iter().zip(b.u.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn abstention_monotone_in_tau(seed in 0u64..1000, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let mut r = RandomSource::new(seed).rng();
            let u = DenseMatrix::from_shape_fn((5, 5), |_| r.random::<f64>());
            let test: Vec<Index> = (0..5).flat_map(|i| (0..5).map(move |j| (i, j))).collect();
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let a = abstain(&u, lo, &test).unwrap();
            let b = abstain(&u, hi, &test).unwrap();
            prop_assert!(b.abstained.iter().all(|ij| a.abstained.contains(ij)));
        }

        #[test]
        fn weights_in_unit_interval(seed in 0u64..1000) {
            let mut r = RandomSource::new(seed).rng();
            let u = DenseMatrix::from_shape_fn((4, 4), |_| if r.random::<f64>() < 0.3 { 0.0 } else { r.random::<f64>() * 10.0 });
            let all: Vec<Index> = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).collect();
            let w = uq_weights(&u, &all[..8], &all).unwrap();
            for (wt, &ij) in w.iter().zip(&all) {
                prop_assert!(*wt > 0.0 && *wt <= 1.0);
                prop_assert_eq!(*wt == 1.0, u[ij] == 0.0);
            }
        }
    }
}
