//! Aligning the Boolean W factors of a perturbation ensemble.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::min_cost_assignment;
use crate::matrix::BoolMatrix;

const MAX_ITERS: usize = 100;

#[derive(Clone, Debug)]
pub struct BooleanClusterResult {
    /// `orderings[p][c]` is the column of solution `p` placed in cluster `c`.
    pub orderings: Vec<Vec<usize>>,
    /// Every solution with its columns reordered into cluster order.
    pub aligned: Vec<BoolMatrix>,
    /// Majority-vote centroids, one column per cluster.
    pub centroids: BoolMatrix,
    /// Total Hamming distance to the centroids after each iteration.
    pub trace: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// Clusters the columns of `P` Boolean `n × k` solutions into `k` groups of
/// exactly one column per solution.
///
/// Each round reorders every solution by optimal assignment on the Hamming
/// cost to the current centroids, then recomputes centroids by majority
/// vote (ties go to 1). It stops once no ordering changes.
pub fn boolean_cluster(w_all: &[BoolMatrix]) -> Result<BooleanClusterResult> {
    let first = w_all
        .first()
        .ok_or_else(|| Error::Input("boolean_cluster needs at least one solution".into()))?;
    let (n, k) = first.shape();
    if w_all.iter().any(|w| w.shape() != (n, k)) {
        return Err(Error::Shape("solutions differ in shape".into()));
    }

    let identity: Vec<usize> = (0..k).collect();
    let mut orderings = vec![identity; w_all.len()];
    // The first solution seeds the centroids.
    let mut centroids = first.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERS {
        iterations += 1;
        let next: Vec<Vec<usize>> = w_all.iter().map(|w| align(w, &centroids)).collect();
        let unchanged = next == orderings;
        orderings = next;
        centroids = majority(w_all, &orderings);
        trace.push(total_distance(w_all, &orderings, &centroids));
        if unchanged {
            converged = true;
            break;
        }
    }

    let aligned = w_all
        .iter()
        .zip(&orderings)
        .map(|(w, order)| w.select_columns(order))
        .collect();
    Ok(BooleanClusterResult {
        orderings,
        aligned,
        centroids,
        trace,
        iterations,
        converged,
    })
}

fn column_distance(w: &BoolMatrix, a: usize, centroids: &BoolMatrix, c: usize) -> usize {
    (0..w.rows())
        .filter(|&i| w.get(i, a) != centroids.get(i, c))
        .count()
}

/// Optimal reordering of `w`'s columns against the centroids.
fn align(w: &BoolMatrix, centroids: &BoolMatrix) -> Vec<usize> {
    let k = w.cols();
    let cost = Array2::from_shape_fn((k, k), |(c, a)| column_distance(w, a, centroids, c) as f64);
    min_cost_assignment(&cost)
}

fn majority(w_all: &[BoolMatrix], orderings: &[Vec<usize>]) -> BoolMatrix {
    let (n, k) = w_all[0].shape();
    let p = w_all.len();
    BoolMatrix::from_fn(n, k, |i, c| {
        let ones = w_all
            .iter()
            .zip(orderings)
            .filter(|(w, order)| w.get(i, order[c]))
            .count();
        2 * ones >= p
    })
}

fn total_distance(w_all: &[BoolMatrix], orderings: &[Vec<usize>], centroids: &BoolMatrix) -> usize {
    w_all
        .iter()
        .zip(orderings)
        .map(|(w, order)| {
            order
                .iter()
                .enumerate()
                .map(|(c, &a)| column_distance(w, a, centroids, c))
                .sum::<usize>()
        })
        .sum()
}
