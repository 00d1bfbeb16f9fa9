//! Procedural Dog, Swimmer, Gaussian and planted-bipartite generators.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};

use super::GroundTruth;
use crate::error::{Error, Result};
use crate::matrix::{boolean_matmul, BoolMatrix, DenseMatrix, RandomSource};

const DOG_SIDE: usize = 20;

/// Stacks an image column-major into a vector index.
fn pixel(side: usize, row: usize, col: usize) -> usize {
    col * side + row
}

fn dog_motifs() -> BoolMatrix {
    let side = DOG_SIDE;
    let centre = (side as f64 - 1.0) / 2.0;
    let mut w = BoolMatrix::zeros(side * side, 4);
    for r in 0..side {
        for c in 0..side {
            let (rf, cf) = (r as f64, c as f64);
            let shapes = [
                // filled disk
                (rf - centre).powi(2) + (cf - centre).powi(2) <= 36.0,
                // plus-shaped cross spanning the image
                (9..=10).contains(&r) || (9..=10).contains(&c),
                // hollow rectangle
                (2..=17).contains(&r) && (2..=17).contains(&c) && (r == 2 || r == 17 || c == 2 || c == 17),
                // diagonal stripe
                r.abs_diff(c) <= 1,
            ];
            for (t, &on) in shapes.iter().enumerate() {
                w.set(pixel(side, r, c), t, on);
            }
        }
    }
    w
}

/// The 400×16 Dog matrix: every OR-combination of four 20×20 motifs,
/// column `s` holding the motifs whose bits are set in `s`.
pub fn gen_dog() -> (BoolMatrix, GroundTruth) {
    let w = dog_motifs();
    let h = BoolMatrix::from_fn(4, 16, |t, s| s >> t & 1 == 1);
    let x = boolean_matmul(&w, &h).expect("shapes conform");
    let truth = GroundTruth {
        generator: "dog".into(),
        seed: None,
        true_k: 4,
        true_w: w.to_dense(),
        true_h: h.to_dense(),
        boolean: true,
    };
    (x, truth)
}

const SWIMMER_SIDE: usize = 32;
const LIMB_LENGTH: usize = 8;
const LIMB_ANGLES: [f64; 4] = [-45.0, -15.0, 15.0, 45.0];
/// Shoulder and hip anchors `(row, col, horizontal direction)`.
const LIMB_ANCHORS: [(usize, usize, f64); 4] = [(9, 14, -1.0), (9, 17, 1.0), (23, 14, -1.0), (23, 17, 1.0)];

fn swimmer_torso() -> Vec<usize> {
    (8..=24)
        .flat_map(|r| [15, 16].map(|c| pixel(SWIMMER_SIDE, r, c)))
        .collect()
}

fn swimmer_limb(limb: usize, position: usize) -> Vec<usize> {
    let (r0, c0, dir) = LIMB_ANCHORS[limb];
    let theta = LIMB_ANGLES[position].to_radians();
    (1..=LIMB_LENGTH)
        .map(|t| {
            let r = r0 as f64 + (t as f64 * theta.sin()).round();
            let c = c0 as f64 + dir * (t as f64 * theta.cos()).round();
            pixel(SWIMMER_SIDE, r as usize, c as usize)
        })
        .collect()
}

/// The 1024×256 Swimmer matrix: a fixed torso with four limbs in four
/// positions each, one column per limb configuration.
///
/// The 16 ground-truth features are the limb positions; the torso is folded
/// into the four left-arm features since every image has exactly one.
pub fn gen_swimmer() -> (BoolMatrix, GroundTruth) {
    let pixels = SWIMMER_SIDE * SWIMMER_SIDE;
    let mut w = BoolMatrix::zeros(pixels, 16);
    for limb in 0..4 {
        for pos in 0..4 {
            let f = limb * 4 + pos;
            for p in swimmer_limb(limb, pos) {
                w.set(p, f, true);
            }
            if limb == 0 {
                for p in swimmer_torso() {
                    w.set(p, f, true);
                }
            }
        }
    }
    let h = BoolMatrix::from_fn(16, 256, |f, config| {
        let (limb, pos) = (f / 4, f % 4);
        (config >> (2 * limb)) & 3 == pos
    });
    let x = boolean_matmul(&w, &h).expect("shapes conform");
    let truth = GroundTruth {
        generator: "swimmer".into(),
        seed: None,
        true_k: 16,
        true_w: w.to_dense(),
        true_h: h.to_dense(),
        boolean: true,
    };
    (x, truth)
}

/// `X = W₀H₀` with `|N(0,1)|` factor entries, plus `noise·|N(0,1)|` per
/// entry when `noise > 0`.
pub fn gen_gaussian(n: usize, m: usize, k: usize, seed: u64, noise: f64) -> Result<(DenseMatrix, GroundTruth)> {
    if k == 0 || k > n.min(m) {
        return Err(Error::Parameter(format!("rank {k} outside 1..={}", n.min(m))));
    }
    if !(noise >= 0.0) {
        return Err(Error::Parameter("noise must be non-negative".into()));
    }
    let mut rng = RandomSource::new(seed).rng();
    let mut draw = || -> f64 { rng.sample::<f64, _>(StandardNormal).abs() };
    let w = DenseMatrix::from_shape_fn((n, k), |_| draw());
    let h = DenseMatrix::from_shape_fn((k, m), |_| draw());
    let mut x = w.dot(&h);
    if noise > 0.0 {
        x.mapv_inplace(|v| v + noise * draw());
    }
    let truth = GroundTruth {
        generator: "gaussian".into(),
        seed: Some(seed),
        true_k: k,
        true_w: w,
        true_h: h,
        boolean: false,
    };
    Ok((x, truth))
}

/// Parameters of the planted bipartite link generator.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSpec {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    /// Chance a node joins each community beyond its guaranteed first one.
    pub extra_membership: f64,
    /// Link probability inside a shared community for average-degree nodes.
    pub within: f64,
    /// Background link probability for average-degree nodes.
    pub background: f64,
    /// Log-normal spread of the per-node degree propensities.
    pub degree_spread: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            rows: 500,
            cols: 500,
            k: 4,
            extra_membership: 0.1,
            within: 0.6,
            background: 0.02,
            degree_spread: 0.5,
        }
    }
}

/// Bipartite graph with `k` planted overlapping communities and
/// degree-heterogeneous noise: the link probability of `(i, j)` is the
/// within or background rate scaled by both endpoints' propensities.
///
/// The ground truth holds the community memberships; X is only a noisy
/// observation of their Boolean product.
pub fn gen_planted_bipartite(spec: &PlantedSpec, seed: u64) -> Result<(BoolMatrix, GroundTruth)> {
    let PlantedSpec { rows, cols, k, .. } = *spec;
    if k == 0 || k > rows.min(cols) {
        return Err(Error::Parameter(format!("rank {k} outside 1..={}", rows.min(cols))));
    }
    for (name, p) in [
        ("extra_membership", spec.extra_membership),
        ("within", spec.within),
        ("background", spec.background),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!("{name} must lie in [0, 1]")));
        }
    }
    let spread = LogNormal::new(0.0, spec.degree_spread.max(0.0))
        .map_err(|e| Error::Parameter(format!("degree_spread: {e}")))?;
    let mut rng = RandomSource::new(seed).rng();

    let memberships = |count: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut m = BoolMatrix::zeros(count, k);
        for i in 0..count {
            m.set(i, rng.random_range(0..k), true);
            for c in 0..k {
                if rng.random::<f64>() < spec.extra_membership {
                    m.set(i, c, true);
                }
            }
        }
        m
    };
    let w = memberships(rows, &mut rng);
    let h = memberships(cols, &mut rng).transpose();
    let propensity = |count: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let raw: Vec<f64> = (0..count).map(|_| spread.sample(rng)).collect();
        let mean = raw.iter().sum::<f64>() / count as f64;
        raw.into_iter().map(|v| v / mean).collect::<Vec<f64>>()
    };
    let theta = propensity(rows, &mut rng);
    let phi = propensity(cols, &mut rng);
    let blocks = boolean_matmul(&w, &h).expect("shapes conform");
    let x = BoolMatrix::from_fn(rows, cols, |i, j| {
        let base = if blocks.get(i, j) { spec.within } else { spec.background };
        rng.random::<f64>() < (base * theta[i] * phi[j]).min(1.0)
    });
    let truth = GroundTruth {
        generator: "planted_bipartite".into(),
        seed: Some(seed),
        true_k: k,
        true_w: w.to_dense(),
        true_h: h.to_dense(),
        boolean: true,
    };
    Ok((x, truth))
}
