//! Small dense helpers not worth a LAPACK dependency.

use ndarray::{Array1, Array2};

/// Solves `A x = b` for symmetric positive definite `A` by Cholesky.
/// Falls back to a tiny ridge when `A` is singular; `None` if that fails too.
pub(crate) fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    let trace: f64 = (0..n).map(|i| a[[i, i]]).sum();
    for ridge in [0.0, 1e-12 * trace.max(1e-300), 1e-8 * trace.max(1e-300)] {
        if let Some(l) = cholesky(a, ridge) {
            let mut y = Array1::zeros(n);
            for i in 0..n {
                let s: f64 = (0..i).map(|k| l[[i, k]] * y[k]).sum();
                y[i] = (b[i] - s) / l[[i, i]];
            }
            let mut x = Array1::zeros(n);
            for i in (0..n).rev() {
                let s: f64 = (i + 1..n).map(|k| l[[k, i]] * x[k]).sum();
                x[i] = (y[i] - s) / l[[i, i]];
            }
            return Some(x);
        }
    }
    None
}

fn cholesky(a: &Array2<f64>, ridge: f64) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
            if i == j {
                let d = a[[i, i]] + ridge - s;
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                l[[i, i]] = d.sqrt();
            } else {
                l[[i, j]] = (a[[i, j]] - s) / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Square assignment minimizing total cost (Hungarian algorithm, O(n³)).
/// Returns `assign[row] = col`.
pub(crate) fn min_cost_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost table");
    if n == 0 {
        return Vec::new();
    }
    // Potentials formulation with 1-based sentinels.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}
