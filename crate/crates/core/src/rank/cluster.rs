//! Aligning real-valued ensemble solutions and scoring cluster quality.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::min_cost_assignment;
use crate::matrix::{median, normalized, DenseMatrix};

const MAX_ITERS: usize = 100;

#[derive(Clone, Debug)]
pub struct CustomClusterResult {
    /// `orderings[p][c]` is the column of solution `p` placed in cluster `c`.
    pub orderings: Vec<Vec<usize>>,
    /// Unit-normalized solutions with columns in cluster order.
    pub aligned: Vec<DenseMatrix>,
    /// Entry-wise median of each cluster's aligned unit columns.
    pub medians: DenseMatrix,
    /// Total cosine similarity to the medians after each accepted iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `(solution, column)` pairs with zero norm.
    pub zero_columns: Vec<(usize, usize)>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Clusters the columns of `P` real `n × k` solutions into `k` groups
/// holding exactly one column from every solution.
///
/// Starting from the first solution's columns as cluster centres, each round reorders every
/// solution by optimal assignment on cosine similarity to the cluster
/// medians, then recomputes the medians. The run stops when the orderings
/// settle. A round that would lower the total similarity is rolled back and
/// ends the run, so the recorded objective never decreases.
pub fn custom_cluster(w_all: &[DenseMatrix]) -> Result<CustomClusterResult> {
    let first = w_all
        .first()
        .ok_or_else(|| Error::Input("custom_cluster needs at least one solution".into()))?;
    let (n, k) = first.dim();
    if w_all.iter().any(|w| w.dim() != (n, k)) {
        return Err(Error::Shape("solutions differ in shape".into()));
    }

    let mut zero_columns = Vec::new();
    // units[p][c] is column c of solution p scaled to unit length.
    let units: Vec<Vec<Vec<f64>>> = w_all
        .iter()
        .enumerate()
        .map(|(p, w)| {
            (0..k)
                .map(|c| {
                    let (u, zero) = normalized(w.column(c));
                    if zero {
                        zero_columns.push((p, c));
                    }
                    u
                })
                .collect()
        })
        .collect();

    let identity: Vec<usize> = (0..k).collect();
    let mut orderings = vec![identity; w_all.len()];
    // The first solution seeds the clusters.
    let mut medians = units[0].clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERS {
        iterations += 1;
        let next: Vec<Vec<usize>> = units
            .iter()
            .map(|cols| {
                let cost = Array2::from_shape_fn((k, k), |(c, a)| -cosine(&medians[c], &cols[a]));
                min_cost_assignment(&cost)
            })
            .collect();
        if next == orderings && !trace.is_empty() {
            converged = true;
            break;
        }
        let next_medians = cluster_medians(&units, &next, n);
        let obj = similarity(&units, &next, &next_medians);
        if trace.last().is_some_and(|&prev| obj < prev) {
            converged = true;
            break;
        }
        orderings = next;
        medians = next_medians;
        trace.push(obj);
    }

    let aligned = orderings
        .iter()
        .zip(&units)
        .map(|(order, cols)| Array2::from_shape_fn((n, k), |(i, c)| cols[order[c]][i]))
        .collect();
    let medians = Array2::from_shape_fn((n, k), |(i, c)| medians[c][i]);
    Ok(CustomClusterResult {
        orderings,
        aligned,
        medians,
        trace,
        iterations,
        converged,
        zero_columns,
    })
}

fn cluster_medians(units: &[Vec<Vec<f64>>], orderings: &[Vec<usize>], n: usize) -> Vec<Vec<f64>> {
    let k = orderings[0].len();
    let mut buf = vec![0.0; units.len()];
    (0..k)
        .map(|c| {
            (0..n)
                .map(|i| {
                    for (p, order) in orderings.iter().enumerate() {
                        buf[p] = units[p][order[c]][i];
                    }
                    median(&mut buf)
                })
                .collect()
        })
        .collect()
}

fn similarity(units: &[Vec<Vec<f64>>], orderings: &[Vec<usize>], medians: &[Vec<f64>]) -> f64 {
    units
        .iter()
        .zip(orderings)
        .map(|(cols, order)| {
            order
                .iter()
                .enumerate()
                .map(|(c, &a)| cosine(&medians[c], &cols[a]))
                .sum::<f64>()
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Silhouettes {
    /// Mean silhouette of each cluster's members.
    pub per_cluster: Vec<f64>,
    /// Some cluster had a single member and was scored 0.
    pub singleton: bool,
}

impl Silhouettes {
    pub fn min(&self) -> f64 {
        self.per_cluster.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.per_cluster.iter().sum::<f64>() / self.per_cluster.len() as f64
    }
}

/// Cosine-distance silhouettes of an aligned stack, where column `c` of
/// every matrix belongs to cluster `c`.
///
/// With a single cluster there is nothing to separate from and every
/// silhouette is 1.
pub fn silhouette_scores(aligned: &[DenseMatrix]) -> Result<Silhouettes> {
    let first = aligned
        .first()
        .ok_or_else(|| Error::Input("silhouettes need at least one solution".into()))?;
    let (_, k) = first.dim();
    if aligned.iter().any(|w| w.dim() != first.dim()) {
        return Err(Error::Shape("solutions differ in shape".into()));
    }
    let p = aligned.len();
    if k == 1 {
        return Ok(Silhouettes {
            per_cluster: vec![1.0],
            singleton: p == 1,
        });
    }
    if p == 1 {
        return Ok(Silhouettes {
            per_cluster: vec![0.0; k],
            singleton: true,
        });
    }

    // Points ordered cluster-major: index c * p + q.
    let points: Vec<Vec<f64>> = (0..k)
        .flat_map(|c| aligned.iter().map(move |w| w.column(c).to_vec()))
        .collect();
    let total = points.len();
    let mut dist = vec![0.0; total * total];
    for a in 0..total {
        for b in (a + 1)..total {
            let d = 1.0 - cosine(&points[a], &points[b]);
            dist[a * total + b] = d;
            dist[b * total + a] = d;
        }
    }

    let per_cluster = (0..k)
        .map(|c| {
            let mut sum = 0.0;
            for q in 0..p {
                let a_idx = c * p + q;
                let row = &dist[a_idx * total..(a_idx + 1) * total];
                let mean_to = |other: usize| {
                    let members = &row[other * p..(other + 1) * p];
                    if other == c {
                        members.iter().sum::<f64>() / (p - 1) as f64
                    } else {
                        members.iter().sum::<f64>() / p as f64
                    }
                };
                let a = mean_to(c);
                let b = (0..k)
                    .filter(|&o| o != c)
                    .map(mean_to)
                    .fold(f64::INFINITY, f64::min);
                let denom = a.max(b);
                sum += if denom > 0.0 { (b - a) / denom } else { 0.0 };
            }
            sum / p as f64
        })
        .collect();
    Ok(Silhouettes {
        per_cluster,
        singleton: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::RandomSource;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn uniform(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut r = RandomSource::new(seed).rng();
        Array2::from_shape_fn((rows, cols), |_| r.random::<f64>())
    }

    /// Textbook silhouette over explicit point and label lists.
    fn silhouette_oracle(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<f64> {
        let d = |a: &[f64], b: &[f64]| 1.0 - cosine(a, b);
        let mut per = vec![(0.0, 0usize); k];
        for i in 0..points.len() {
            let mut sums = vec![(0.0, 0usize); k];
            for j in 0..points.len() {
                if i != j {
                    sums[labels[j]].0 += d(&points[i], &points[j]);
                    sums[labels[j]].1 += 1;
                }
            }
            let a = sums[labels[i]].0 / sums[labels[i]].1 as f64;
            let b = (0..k)
                .filter(|&c| c != labels[i])
                .map(|c| sums[c].0 / sums[c].1 as f64)
                .fold(f64::INFINITY, f64::min);
            let s = if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
            per[labels[i]].0 += s;
            per[labels[i]].1 += 1;
        }
        per.into_iter().map(|(s, c)| s / c as f64).collect()
    }

    #[test]
    fn identical_solutions_keep_identity() {
        let w = uniform(12, 3, 1);
        let res = custom_cluster(&vec![w; 5]).unwrap();
        assert!(res.orderings.iter().all(|o| o == &vec![0, 1, 2]));
        assert!(res.converged);
    }

    #[test]
    fn planted_permutations_recovered() {
        let mut r = RandomSource::new(4).rng();
        let reference = uniform(20, 4, 2);
        let mut perms = Vec::new();
        let copies: Vec<DenseMatrix> = (0..8)
            .map(|_| {
                let mut perm: Vec<usize> = (0..4).collect();
                perm.shuffle(&mut r);
                perms.push(perm.clone());
                reference.select(ndarray::Axis(1), &perm)
            })
            .collect();
        let res = custom_cluster(&copies).unwrap();
        // Mapping back through each planted permutation must agree on a
        // single global relabeling.
        let global: Vec<usize> = (0..4).map(|c| perms[0][res.orderings[0][c]]).collect();
        for (p, order) in res.orderings.iter().enumerate() {
            let mapped: Vec<usize> = (0..4).map(|c| perms[p][order[c]]).collect();
            assert_eq!(mapped, global);
        }
    }

    #[test]
    fn medians_track_planted_directions() {
        let mut r = RandomSource::new(6).rng();
        let d0: Vec<f64> = (0..30).map(|i| if i < 15 { 1.0 } else { 0.05 }).collect();
        let d1: Vec<f64> = (0..30).map(|i| if i < 15 { 0.05 } else { 1.0 }).collect();
        let copies: Vec<DenseMatrix> = (0..10)
            .map(|q| {
                Array2::from_shape_fn((30, 2), |(i, c)| {
                    let base = if (c + q) % 2 == 0 { d0[i] } else { d1[i] };
                    base * (1.0 + 0.1 * r.random::<f64>())
                })
            })
            .collect();
        let res = custom_cluster(&copies).unwrap();
        let sims: Vec<f64> = (0..2)
            .map(|c| {
                let col = res.medians.column(c).to_vec();
                cosine(&col, &d0).max(cosine(&col, &d1))
            })
            .collect();
        assert!(sims.iter().all(|&s| s >= 0.99), "{sims:?}");
        let sil = silhouette_scores(&res.aligned).unwrap();
        assert!(sil.min() > 0.8);
    }

    #[test]
    fn objective_trace_non_decreasing() {
        for seed in 0..20 {
            let stack: Vec<DenseMatrix> = (0..6).map(|q| uniform(10, 4, seed * 10 + q)).collect();
            let res = custom_cluster(&stack).unwrap();
            for pair in res.trace.windows(2) {
                assert!(pair[1] >= pair[0]);
            }
            for order in &res.orderings {
                let mut sorted = order.clone();
                sorted.sort_unstable();
                assert_eq!(sorted, vec![0, 1, 2, 3]);
            }
        }
    }

    #[test]
    fn zero_columns_flagged() {
        let mut w = uniform(5, 2, 0);
        w.column_mut(1).fill(0.0);
        let res = custom_cluster(&[w.clone(), w]).unwrap();
        assert_eq!(res.zero_columns, vec![(0, 1), (1, 1)]);
    }

    #[test]
    fn silhouettes_of_perfect_and_collapsed_clusters() {
        let w = Array2::from_shape_fn((4, 2), |(i, c)| if i % 2 == c { 1.0 } else { 0.0 });
        let perfect = silhouette_scores(&vec![w.clone(); 4]).unwrap();
        assert!(perfect.per_cluster.iter().all(|&s| (s - 1.0).abs() < 1e-12));

        let same = Array2::from_shape_fn((4, 2), |(i, _)| (i + 1) as f64);
        let collapsed = silhouette_scores(&vec![same; 4]).unwrap();
        assert!(collapsed.per_cluster.iter().all(|&s| s <= 1e-12));
    }

    #[test]
    fn silhouettes_match_oracle() {
        for seed in 0..10 {
            let stack: Vec<DenseMatrix> = (0..5).map(|q| uniform(6, 3, 100 + seed * 7 + q)).collect();
            let got = silhouette_scores(&stack).unwrap();
            let mut points = Vec::new();
            let mut labels = Vec::new();
            for w in &stack {
                for c in 0..3 {
                    points.push(w.column(c).to_vec());
                    labels.push(c);
                }
            }
            let want = silhouette_oracle(&points, &labels, 3);
            for (a, b) in got.per_cluster.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-9);
            }
            assert!(got.per_cluster.iter().all(|s| (-1.0..=1.0).contains(s)));
        }
    }

    #[test]
    fn single_member_clusters_flagged() {
        let sil = silhouette_scores(&[uniform(4, 3, 1)]).unwrap();
        assert!(sil.singleton);
        assert_eq!(sil.per_cluster, vec![0.0; 3]);
    }
}
