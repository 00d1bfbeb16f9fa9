//! Per-component thresholds for turning real factors into Boolean ones.
//!
//! Every method binarizes with the `v >= t` rule. Thresholds are always
//! chosen among (or inside the range of) the component's own values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{BoolMatrix, DenseMatrix, MaskMatrix};

/// Exact candidate scan up to this length, 256-bin histogram beyond.
const OTSU_EXACT_LIMIT: usize = 4096;
const OTSU_BINS: usize = 256;

/// How (and whether) a solver turns its factors Boolean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Thresholder {
    Otsu,
    KMeans,
    /// Coordinate descent directly on the reconstruction error.
    Search,
    /// No thresholding; factors stay real.
    Uniform,
}

impl fmt::Display for Thresholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Thresholder::Otsu => "otsu",
            Thresholder::KMeans => "kmeans",
            Thresholder::Search => "search",
            Thresholder::Uniform => "uniform",
        })
    }
}

impl FromStr for Thresholder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "otsu" => Ok(Thresholder::Otsu),
            "kmeans" | "k-means" => Ok(Thresholder::KMeans),
            "search" => Ok(Thresholder::Search),
            "uniform" | "none" => Ok(Thresholder::Uniform),
            other => Err(Error::Parameter(format!("unknown thresholder {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdOutcome {
    pub threshold: f64,
    /// Fewer than two distinct values; everything binarizes to one.
    pub degenerate: bool,
}

/// Per-component thresholds for the columns of W and the rows of H.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub t_w: Vec<f64>,
    pub t_h: Vec<f64>,
}

impl ThresholdPair {
    /// `component,t_w,t_h` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,t_w,t_h\n");
        for (c, (a, b)) in self.t_w.iter().zip(&self.t_h).enumerate() {
            out.push_str(&format!("{c},{a:?},{b:?}\n"));
        }
        out
    }
}

fn check_vector(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Input("cannot threshold an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("cannot threshold non-finite values".into()));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// Otsu's threshold: maximizes `π₀π₁(μ₀ − μ₁)²` over splits `{v < t}`, `{v ≥ t}`.
pub fn otsu_threshold(v: &[f64]) -> Result<ThresholdOutcome> {
    check_vector(v)?;
    let s = sorted(v);
    if s[0] == s[s.len() - 1] {
        return Ok(ThresholdOutcome {
            threshold: s[0],
            degenerate: true,
        });
    }
    let threshold = if s.len() <= OTSU_EXACT_LIMIT {
        otsu_exact(&s)
    } else {
        otsu_histogram(&s)
    };
    Ok(ThresholdOutcome {
        threshold,
        degenerate: false,
    })
}

fn between_class_variance(n0: f64, sum0: f64, n1: f64, sum1: f64) -> f64 {
    if n0 == 0.0 || n1 == 0.0 {
        return 0.0;
    }
    let total = n0 + n1;
    let (p0, p1) = (n0 / total, n1 / total);
    let d = sum0 / n0 - sum1 / n1;
    p0 * p1 * d * d
}

fn otsu_exact(s: &[f64]) -> f64 {
    let n = s.len() as f64;
    let total: f64 = s.iter().sum();
    let (mut best_t, mut best_var) = (s[0], f64::NEG_INFINITY);
    let mut sum0 = 0.0;
    for idx in 0..s.len() {
        if idx == 0 || s[idx] != s[idx - 1] {
            let n0 = idx as f64;
            let var = between_class_variance(n0, sum0, n - n0, total - sum0);
            if var > best_var {
                best_var = var;
                best_t = s[idx];
            }
        }
        sum0 += s[idx];
    }
    best_t
}

fn otsu_histogram(s: &[f64]) -> f64 {
    let (lo, hi) = (s[0], s[s.len() - 1]);
    let width = (hi - lo) / OTSU_BINS as f64;
    let mut count = [0.0f64; OTSU_BINS];
    let mut sum = [0.0f64; OTSU_BINS];
    let mut first = [f64::NAN; OTSU_BINS];
    for &v in s {
        let b = (((v - lo) / width) as usize).min(OTSU_BINS - 1);
        count[b] += 1.0;
        sum[b] += v;
        if first[b].is_nan() {
            first[b] = v;
        }
    }
    let n = s.len() as f64;
    let total: f64 = s.iter().sum();
    let (mut best_t, mut best_var) = (lo, f64::NEG_INFINITY);
    let (mut n0, mut sum0) = (0.0, 0.0);
    for b in 0..OTSU_BINS {
        if count[b] > 0.0 {
            let var = between_class_variance(n0, sum0, n - n0, total - sum0);
            if var > best_var {
                best_var = var;
                best_t = first[b];
            }
        }
        n0 += count[b];
        sum0 += sum[b];
    }
    best_t
}

/// Exact 1-D two-means by scanning sorted split points; returns the centre
/// midpoint.
pub fn kmeans_threshold(v: &[f64]) -> Result<ThresholdOutcome> {
    check_vector(v)?;
    let s = sorted(v);
    let n = s.len();
    if s[0] == s[n - 1] {
        return Ok(ThresholdOutcome {
            threshold: s[0],
            degenerate: true,
        });
    }
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + s[i];
        prefix_sq[i + 1] = prefix_sq[i] + s[i] * s[i];
    }
    let sse = |a: usize, b: usize| {
        let cnt = (b - a) as f64;
        let sm = prefix[b] - prefix[a];
        (prefix_sq[b] - prefix_sq[a]) - sm * sm / cnt
    };
    let (mut best_split, mut best_cost) = (0, f64::INFINITY);
    for split in 1..n {
        if s[split] == s[split - 1] {
            continue;
        }
        let cost = sse(0, split) + sse(split, n);
        if cost < best_cost {
            best_cost = cost;
            best_split = split;
        }
    }
    let c0 = prefix[best_split] / best_split as f64;
    let c1 = (prefix[n] - prefix[best_split]) / (n - best_split) as f64;
    Ok(ThresholdOutcome {
        threshold: 0.5 * (c0 + c1),
        degenerate: false,
    })
}

fn single_threshold(method: Thresholder, v: &[f64]) -> Result<ThresholdOutcome> {
    match method {
        Thresholder::Otsu => otsu_threshold(v),
        Thresholder::KMeans => kmeans_threshold(v),
        other => Err(Error::Parameter(format!(
            "{other} is not a per-vector thresholding rule"
        ))),
    }
}

/// Thresholding rule for [`binarize_factors`]. The search variant needs the
/// Boolean target it reconstructs.
#[derive(Clone, Copy, Debug)]
pub enum Binarizer<'a> {
    Otsu,
    KMeans,
    Search {
        x: &'a BoolMatrix,
        mask: Option<&'a MaskMatrix>,
        max_sweeps: usize,
    },
}

#[derive(Clone, Debug)]
pub struct Binarized {
    pub w: BoolMatrix,
    pub h: BoolMatrix,
    pub thresholds: ThresholdPair,
    /// Components with a constant factor or that ended up all-zero.
    pub degenerate_components: Vec<usize>,
}

/// Binarizes each column of W and row of H with its own threshold.
pub fn binarize_factors(w: &DenseMatrix, h: &DenseMatrix, method: Binarizer<'_>) -> Result<Binarized> {
    if w.ncols() != h.nrows() {
        return Err(Error::Shape(format!(
            "W {:?} and H {:?} disagree on rank",
            w.dim(),
            h.dim()
        )));
    }
    let rule = match method {
        Binarizer::Otsu => Thresholder::Otsu,
        Binarizer::KMeans => Thresholder::KMeans,
        Binarizer::Search {
            x,
            mask,
            max_sweeps,
        } => {
            let res = search_thresholds_masked(x, mask, w, h, max_sweeps)?;
            let mut out = apply_thresholds(w, h, &res.thresholds)?;
            out.degenerate_components.extend(res.degenerate_components);
            out.degenerate_components.sort_unstable();
            out.degenerate_components.dedup();
            return Ok(out);
        }
    };
    let mut degenerate = Vec::new();
    let mut t_w = Vec::with_capacity(w.ncols());
    let mut t_h = Vec::with_capacity(w.ncols());
    for c in 0..w.ncols() {
        let a = single_threshold(rule, &w.column(c).to_vec())?;
        let b = single_threshold(rule, &h.row(c).to_vec())?;
        if a.degenerate || b.degenerate {
            degenerate.push(c);
        }
        t_w.push(a.threshold);
        t_h.push(b.threshold);
    }
    let mut out = apply_thresholds(w, h, &ThresholdPair { t_w, t_h })?;
    out.degenerate_components.extend(degenerate);
    out.degenerate_components.sort_unstable();
    out.degenerate_components.dedup();
    Ok(out)
}

/// Applies given thresholds with the `>=` rule, flagging all-zero components.
pub fn apply_thresholds(w: &DenseMatrix, h: &DenseMatrix, pair: &ThresholdPair) -> Result<Binarized> {
    let k = w.ncols();
    if h.nrows() != k || pair.t_w.len() != k || pair.t_h.len() != k {
        return Err(Error::Shape("threshold count does not match rank".into()));
    }
    let wb = BoolMatrix::from_fn(w.nrows(), k, |i, c| w[[i, c]] >= pair.t_w[c]);
    let hb = BoolMatrix::from_fn(k, h.ncols(), |c, j| h[[c, j]] >= pair.t_h[c]);
    let degenerate_components = (0..k)
        .filter(|&c| {
            (0..wb.rows()).all(|i| !wb.get(i, c)) || (0..hb.cols()).all(|j| !hb.get(c, j))
        })
        .collect();
    Ok(Binarized {
        w: wb,
        h: hb,
        thresholds: pair.clone(),
        degenerate_components,
    })
}

/// Binarizes every row of `h` with its own otsu/kmeans threshold.
pub fn binarize_rows(h: &DenseMatrix, method: Thresholder) -> Result<BoolMatrix> {
    let mut out = BoolMatrix::zeros(h.nrows(), h.ncols());
    for c in 0..h.nrows() {
        let t = single_threshold(method, &h.row(c).to_vec())?.threshold;
        for j in 0..h.ncols() {
            out.set(c, j, h[[c, j]] >= t);
        }
    }
    Ok(out)
}

/// `Σ M_ij (X_ij − (W ⊗_B H)_ij)²`.
pub fn boolean_error(x: &BoolMatrix, mask: Option<&MaskMatrix>, w: &BoolMatrix, h: &BoolMatrix) -> f64 {
    let coverage = Coverage::new(w, h);
    coverage.error(x, mask)
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub thresholds: ThresholdPair,
    /// Weighted squared reconstruction error after each sweep; entry 0 is the start.
    pub trace: Vec<f64>,
    pub sweeps: usize,
    pub degenerate_components: Vec<usize>,
}

impl SearchResult {
    pub fn error(&self) -> f64 {
        *self.trace.last().expect("trace holds the starting error")
    }
}

/// Coordinate-descent threshold search minimizing `‖X − W_b ⊗_B H_b‖²_F`.
pub fn search_thresholds(
    x: &BoolMatrix,
    w: &DenseMatrix,
    h: &DenseMatrix,
    max_sweeps: usize,
) -> Result<SearchResult> {
    search_thresholds_masked(x, None, w, h, max_sweeps)
}

/// Weighted form of [`search_thresholds`]; entries with zero mask are ignored.
pub fn search_thresholds_masked(
    x: &BoolMatrix,
    mask: Option<&MaskMatrix>,
    w: &DenseMatrix,
    h: &DenseMatrix,
    max_sweeps: usize,
) -> Result<SearchResult> {
    let (n, m) = x.shape();
    let k = w.ncols();
    if w.nrows() != n || h.ncols() != m || h.nrows() != k {
        return Err(Error::Shape(format!(
            "X {:?}, W {:?}, H {:?}",
            x.shape(),
            w.dim(),
            h.dim()
        )));
    }
    if let Some(mk) = mask {
        if mk.dim() != (n, m) {
            return Err(Error::Shape("mask does not match X".into()));
        }
    }

    // Start from the better of the two cheap rules so the search never does
    // worse than either.
    let mut start = None;
    for rule in [Binarizer::Otsu, Binarizer::KMeans] {
        let b = binarize_factors(w, h, rule)?;
        let err = boolean_error(x, mask, &b.w, &b.h);
        if start.as_ref().is_none_or(|(e, _)| err < *e) {
            start = Some((err, b));
        }
    }
    let (start_err, start) = start.expect("two candidate rules");

    let w_cols: Vec<Vec<f64>> = (0..k).map(|c| w.column(c).to_vec()).collect();
    let h_rows: Vec<Vec<f64>> = (0..k).map(|c| h.row(c).to_vec()).collect();
    let snap = |vals: &[f64], t: f64| {
        vals.iter()
            .copied()
            .filter(|&v| v >= t)
            .fold(f64::INFINITY, f64::min)
    };
    let mut t_w: Vec<f64> = (0..k).map(|c| snap(&w_cols[c], start.thresholds.t_w[c])).collect();
    let mut t_h: Vec<f64> = (0..k).map(|c| snap(&h_rows[c], start.thresholds.t_h[c])).collect();
    let mut wb = start.w;
    let mut hb = start.h;
    let mut coverage = Coverage::new(&wb, &hb);
    let mut trace = vec![start_err];
    let weight = |i: usize, j: usize| mask.map_or(1.0, |mk| mk[[i, j]]);

    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut changed = false;
        for c in 0..k {
            // W column c with H fixed.
            coverage.remove(&wb, &hb, c);
            let hc: Vec<usize> = (0..m).filter(|&j| hb.get(c, j)).collect();
            let delta: Vec<f64> = (0..n)
                .map(|i| {
                    hc.iter()
                        .filter(|&&j| coverage.count(i, j) == 0)
                        .map(|&j| weight(i, j) * if x.get(i, j) { -1.0 } else { 1.0 })
                        .sum()
                })
                .collect();
            let t = best_threshold(&w_cols[c], &delta, t_w[c]);
            if t != t_w[c] {
                changed = true;
                t_w[c] = t;
            }
            for i in 0..n {
                wb.set(i, c, w_cols[c][i] >= t);
            }
            coverage.add(&wb, &hb, c);

            // H row c with W fixed.
            coverage.remove(&wb, &hb, c);
            let wc: Vec<usize> = (0..n).filter(|&i| wb.get(i, c)).collect();
            let delta: Vec<f64> = (0..m)
                .map(|j| {
                    wc.iter()
                        .filter(|&&i| coverage.count(i, j) == 0)
                        .map(|&i| weight(i, j) * if x.get(i, j) { -1.0 } else { 1.0 })
                        .sum()
                })
                .collect();
            let t = best_threshold(&h_rows[c], &delta, t_h[c]);
            if t != t_h[c] {
                changed = true;
                t_h[c] = t;
            }
            for j in 0..m {
                hb.set(c, j, h_rows[c][j] >= t);
            }
            coverage.add(&wb, &hb, c);
        }
        trace.push(coverage.error(x, mask));
        if !changed {
            break;
        }
    }
    let degenerate_components = (0..k)
        .filter(|&c| {
            let first_w = w_cols[c][0];
            let first_h = h_rows[c][0];
            w_cols[c].iter().all(|&v| v == first_w) || h_rows[c].iter().all(|&v| v == first_h)
        })
        .collect();
    Ok(SearchResult {
        thresholds: ThresholdPair { t_w, t_h },
        trace,
        sweeps,
        degenerate_components,
    })
}

/// Picks the candidate value `t` minimizing `Σ_{v_i ≥ t} delta_i`; the
/// current threshold wins ties so the objective never increases.
fn best_threshold(values: &[f64], delta: &[f64], current: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let (mut best_t, mut best_cost) = (current, f64::INFINITY);
    let mut current_cost = f64::INFINITY;
    let mut acc = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let t = values[order[idx]];
        while idx < order.len() && values[order[idx]] == t {
            acc += delta[order[idx]];
            idx += 1;
        }
        if t == current {
            current_cost = acc;
        }
        if acc < best_cost {
            best_cost = acc;
            best_t = t;
        }
    }
    if current_cost <= best_cost {
        current
    } else {
        best_t
    }
}

/// Per-entry count of components covering `(i, j)` in a Boolean product.
struct Coverage {
    cols: usize,
    counts: Vec<u32>,
}

impl Coverage {
    fn new(w: &BoolMatrix, h: &BoolMatrix) -> Self {
        let (n, m) = (w.rows(), h.cols());
        let mut cov = Self {
            cols: m,
            counts: vec![0; n * m],
        };
        for c in 0..w.cols() {
            cov.add(w, h, c);
        }
        cov
    }

    fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.cols + j]
    }

    fn add(&mut self, w: &BoolMatrix, h: &BoolMatrix, c: usize) {
        self.apply(w, h, c, true);
    }

    fn remove(&mut self, w: &BoolMatrix, h: &BoolMatrix, c: usize) {
        self.apply(w, h, c, false);
    }

    fn apply(&mut self, w: &BoolMatrix, h: &BoolMatrix, c: usize, add: bool) {
        let hc: Vec<usize> = (0..h.cols()).filter(|&j| h.get(c, j)).collect();
        for i in 0..w.rows() {
            if !w.get(i, c) {
                continue;
            }
            for &j in &hc {
                let slot = &mut self.counts[i * self.cols + j];
                if add {
                    *slot += 1;
                } else {
                    *slot -= 1;
                }
            }
        }
    }

    fn error(&self, x: &BoolMatrix, mask: Option<&MaskMatrix>) -> f64 {
        let mut err = 0.0;
        for i in 0..x.rows() {
            for j in 0..self.cols {
                if x.get(i, j) != (self.count(i, j) > 0) {
                    err += mask.map_or(1.0, |mk| mk[[i, j]]);
                }
            }
        }
        err
    }
}
