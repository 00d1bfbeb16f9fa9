//! Dense and Boolean matrix storage, seeded perturbations and the shared
//! numerical kernels every solver builds on.

mod io;
mod nnls;
mod random;

pub use io::{read_csv, read_matrix_market, write_csv, write_matrix_market, CooMatrix};
pub use nnls::{nnls_regress, nnls_regress_masked, NnlsOptions, Regression};
pub use random::RandomSource;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Real matrix stored row-major.
pub type DenseMatrix = Array2<f64>;

/// Observation weights in `[0, 1]`, same shape as the matrix they mask.
pub type MaskMatrix = Array2<f64>;

/// Matrix of bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolMatrix {
    bits: Array2<bool>,
}

impl BoolMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            bits: Array2::from_elem((rows, cols), false),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            bits: Array2::from_shape_fn((rows, cols), |(i, j)| f(i, j)),
        }
    }

    pub fn from_array(bits: Array2<bool>) -> Self {
        Self { bits }
    }

    /// Converts a real matrix whose entries are all exactly 0 or 1.
    pub fn from_dense(x: &DenseMatrix) -> Result<Self> {
        if let Some(((i, j), v)) = x.indexed_iter().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(Error::Input(format!(
                "matrix is not Boolean: entry ({i}, {j}) = {v}"
            )));
        }
        Ok(Self {
            bits: x.mapv(|v| v == 1.0),
        })
    }

    /// Binarizes with the `>= threshold` rule.
    pub fn from_threshold(x: &DenseMatrix, threshold: f64) -> Self {
        Self {
            bits: x.mapv(|v| v >= threshold),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.bits.mapv(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.bits.nrows()
    }

    pub fn cols(&self) -> usize {
        self.bits.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.bits.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[[i, j]]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[[i, j]] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn column(&self, j: usize) -> Vec<bool> {
        self.bits.column(j).to_vec()
    }

    pub fn row(&self, i: usize) -> Vec<bool> {
        self.bits.row(i).to_vec()
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.bits
    }

    pub fn transpose(&self) -> Self {
        Self {
            bits: self.bits.t().to_owned(),
        }
    }

    /// Selects columns in the given order.
    pub fn select_columns(&self, order: &[usize]) -> Self {
        Self {
            bits: self.bits.select(Axis(1), order),
        }
    }

    /// Number of differing entries.
    pub fn hamming(&self, other: &BoolMatrix) -> usize {
        self.bits
            .iter()
            .zip(other.bits.iter())
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Checks that `mask` conforms to `shape` and holds weights in `[0, 1]`.
/// Unless `continuous` is set, weights must be exactly 0 or 1.
pub fn validate_mask(mask: &MaskMatrix, shape: (usize, usize), continuous: bool) -> Result<()> {
    if mask.dim() != shape {
        return Err(Error::Shape(format!(
            "mask is {:?}, matrix is {:?}",
            mask.dim(),
            shape
        )));
    }
    for &v in mask {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Input(format!("mask entry {v} outside [0, 1]")));
        }
        if !continuous && v != 0.0 && v != 1.0 {
            return Err(Error::Input(format!(
                "mask entry {v} is not binary and continuous weights are disabled"
            )));
        }
    }
    Ok(())
}

pub(crate) fn ensure_finite(x: &DenseMatrix, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("{what} contains NaN or infinite values")));
    }
    Ok(())
}

pub(crate) fn ensure_nonnegative(x: &DenseMatrix, what: &str) -> Result<()> {
    ensure_finite(x, what)?;
    if let Some(v) = x.iter().find(|&&v| v < 0.0) {
        return Err(Error::Input(format!("{what} has negative entry {v}")));
    }
    Ok(())
}

fn check_product_shapes(x: &DenseMatrix, w: &DenseMatrix, h: &DenseMatrix) -> Result<()> {
    if w.nrows() != x.nrows() || h.ncols() != x.ncols() || w.ncols() != h.nrows() {
        return Err(Error::Shape(format!(
            "X {:?} cannot be reconstructed from W {:?} and H {:?}",
            x.dim(),
            w.dim(),
            h.dim()
        )));
    }
    Ok(())
}

pub(crate) fn frobenius_sq(x: &DenseMatrix) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `‖X − WH‖²_F / ‖X‖²_F`.
pub fn relative_error(x: &DenseMatrix, w: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    check_product_shapes(x, w, h)?;
    let denom = frobenius_sq(x);
    if denom == 0.0 {
        return Err(Error::Degenerate("relative error of a zero matrix".into()));
    }
    let residual = x - &w.dot(h);
    Ok(frobenius_sq(&residual) / denom)
}

/// `‖X − WH‖_F / ‖X‖_F`, the unsquared ratio used for column errors.
pub fn relative_error_unsquared(x: &DenseMatrix, w: &DenseMatrix, h: &DenseMatrix) -> Result<f64> {
    relative_error(x, w, h).map(f64::sqrt)
}

/// Per-column `‖x_j − x̂_j‖ / ‖x_j‖`, counting only entries with positive
/// weight. A column with zero norm reports its absolute residual norm.
pub fn column_errors(x: &DenseMatrix, xhat: &DenseMatrix, mask: Option<&MaskMatrix>) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..x.nrows() {
                let wt = mask.map_or(1.0, |m| m[[i, j]]);
                if wt == 0.0 {
                    continue;
                }
                let d = x[[i, j]] - xhat[[i, j]];
                num += wt * d * d;
                den += wt * x[[i, j]] * x[[i, j]];
            }
            if den > 0.0 {
                (num / den).sqrt()
            } else {
                num.sqrt()
            }
        })
        .collect()
}

/// Multiplicative uniform noise `Y = X ⊙ (1 − ε + 2ε·u)`, `u ~ U[0, 1)`.
pub fn perturb_uniform(x: &DenseMatrix, epsilon: f64, rng: &RandomSource) -> Result<DenseMatrix> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Parameter(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let mut r = rng.rng();
    let mut y = x.clone();
    for v in y.iter_mut() {
        let u: f64 = r.random();
        *v *= 1.0 - epsilon + 2.0 * epsilon * u;
    }
    Ok(y)
}

/// Flips exactly `round(eps_pos·#zeros)` zeros to one and
/// `round(eps_neg·#ones)` ones to zero, drawn without replacement.
pub fn perturb_boolean(
    x: &BoolMatrix,
    eps_pos: f64,
    eps_neg: f64,
    rng: &RandomSource,
) -> Result<BoolMatrix> {
    for (name, eps) in [("eps_pos", eps_pos), ("eps_neg", eps_neg)] {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::Parameter(format!("{name} must lie in [0, 1), got {eps}")));
        }
    }
    let cols = x.cols();
    let (mut zeros, mut ones) = (Vec::new(), Vec::new());
    for ((i, j), &b) in x.bits.indexed_iter() {
        if b {
            ones.push(i * cols + j);
        } else {
            zeros.push(i * cols + j);
        }
    }
    let mut r = rng.rng();
    let mut y = x.clone();
    for (pool, eps) in [(&zeros, eps_pos), (&ones, eps_neg)] {
        let count = (eps * pool.len() as f64).round() as usize;
        for pick in sample(&mut r, pool.len(), count.min(pool.len())) {
            let idx = pool[pick];
            let (i, j) = (idx / cols, idx % cols);
            y.bits[[i, j]] = !y.bits[[i, j]];
        }
    }
    Ok(y)
}

/// Boolean product: `out(i, j) = OR_k W(i, k) AND H(k, j)`.
pub fn boolean_matmul(w: &BoolMatrix, h: &BoolMatrix) -> Result<BoolMatrix> {
    if w.cols() != h.rows() {
        return Err(Error::Shape(format!(
            "Boolean product of {:?} and {:?}",
            w.shape(),
            h.shape()
        )));
    }
    let (n, k, m) = (w.rows(), w.cols(), h.cols());
    let mut out = BoolMatrix::zeros(n, m);
    for i in 0..n {
        for c in 0..k {
            if !w.bits[[i, c]] {
                continue;
            }
            for j in 0..m {
                if h.bits[[c, j]] {
                    out.bits[[i, j]] = true;
                }
            }
        }
    }
    Ok(out)
}

/// Unit-L2 normalization of a column; zero columns stay zero.
pub(crate) fn normalized(col: ArrayView1<f64>) -> (Vec<f64>, bool) {
    let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        (vec![0.0; col.len()], true)
    } else {
        (col.iter().map(|v| v / norm).collect(), false)
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
