//! Shared fixtures for the solver benchmarks.

use linkfact::datagen::{gen_dog, gen_gaussian};
use linkfact::{BoolMatrix, DenseMatrix, MaskMatrix, SolverOptions};

/// Noiseless rank-3 Gaussian product, 50 × 100.
pub fn gaussian() -> DenseMatrix {
    gen_gaussian(50, 100, 3, 0, 0.0).expect("valid shape").0
}

/// The 400 × 16 Boolean Dog matrix.
pub fn dog() -> BoolMatrix {
    gen_dog().0
}

/// All-ones mask for `x`.
pub fn full_mask(x: &DenseMatrix) -> MaskMatrix {
    MaskMatrix::ones(x.dim())
}

/// Mask hiding every seventh entry, a stand-in for a test split.
pub fn holdout_mask(rows: usize, cols: usize) -> MaskMatrix {
    MaskMatrix::from_shape_fn((rows, cols), |(i, j)| if (i * cols + j) % 7 == 0 { 0.0 } else { 1.0 })
}

/// Fixed-length runs so timings compare sweep cost, not convergence luck.
pub fn fixed_sweeps(iters: usize) -> SolverOptions {
    SolverOptions {
        max_iters: iters,
        tol: 1e-300,
        ..SolverOptions::default()
    }
}
