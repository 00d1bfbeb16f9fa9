//! Synthetic datasets, PPI edge-list ingestion and train/test splitting.

mod ppi;
mod split;
mod synthetic;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{write_csv, DenseMatrix};

pub use ppi::{load_ppi_edgelist, parse_ppi_edgelist, PpiData, PpiStats, MIN_PARTNERS};
pub use split::{parse_split, read_split, split_stratified, Split};
pub use synthetic::{gen_dog, gen_gaussian, gen_planted_bipartite, gen_swimmer, PlantedSpec};

/// Generating factors for a synthetic matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub generator: String,
    pub seed: Option<u64>,
    pub true_k: usize,
    pub true_w: DenseMatrix,
    pub true_h: DenseMatrix,
    /// X is the Boolean product of the factors rather than the real one.
    pub boolean: bool,
}

#[derive(Serialize, Deserialize)]
struct TruthMetadata {
    generator: String,
    seed: Option<u64>,
    true_k: usize,
    rows: usize,
    cols: usize,
    boolean: bool,
}

/// Writes `X.csv`, `W_true.csv`, `H_true.csv` and `ground_truth.json` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, x: &DenseMatrix, truth: &GroundTruth) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(dir.join("X.csv"), x)?;
    write_csv(dir.join("W_true.csv"), &truth.true_w)?;
    write_csv(dir.join("H_true.csv"), &truth.true_h)?;
    let meta = TruthMetadata {
        generator: truth.generator.clone(),
        seed: truth.seed,
        true_k: truth.true_k,
        rows: x.nrows(),
        cols: x.ncols(),
        boolean: truth.boolean,
    };
    let path = dir.join("ground_truth.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(path, e))
}
