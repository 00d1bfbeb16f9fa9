//! Train/test masks over the known entries of a matrix.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::matrix::{validate_mask, DenseMatrix, MaskMatrix, RandomSource};
use crate::uq::Index;

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub test_size: f64,
    pub seed: u64,
    pub stratified: bool,
    /// Known entries with a non-zero value.
    pub positives: Vec<Index>,
    /// Known entries equal to zero.
    pub negatives: Vec<Index>,
    pub train: Vec<Index>,
    pub test: Vec<Index>,
    /// One on training entries, zero on test and unknown entries.
    pub mask: MaskMatrix,
}

impl Split {
    /// `X ⊙ M`.
    pub fn training_matrix(&self, x: &DenseMatrix) -> DenseMatrix {
        x * &self.mask
    }

    /// `row,col,set` lines with `set` either `train` or `test`.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(Index, &str)> = self
            .train
            .iter()
            .map(|&ij| (ij, "train"))
            .chain(self.test.iter().map(|&ij| (ij, "test")))
            .collect();
        rows.sort_unstable();
        let mut out = String::from("row,col,set\n");
        for ((i, j), set) in rows {
            out.push_str(&format!("{i},{j},{set}\n"));
        }
        out
    }
}

/// Holds out `test_size` of the known entries (those with `known > 0`).
///
/// With `stratify` the positives and negatives each give up
/// `round(count × test_size)` entries, preserving the link fraction;
/// otherwise `round(total × test_size)` entries are drawn uniformly.
pub fn split_stratified(
    x: &DenseMatrix,
    known: &MaskMatrix,
    test_size: f64,
    seed: u64,
    stratify: bool,
) -> Result<Split> {
    if !(test_size > 0.0 && test_size < 1.0) {
        return Err(Error::Parameter(format!("test_size must lie in (0, 1), got {test_size}")));
    }
    validate_mask(known, x.dim(), true)?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for ((i, j), &k) in known.indexed_iter() {
        if k > 0.0 {
            if x[[i, j]] != 0.0 {
                positives.push((i, j));
            } else {
                negatives.push((i, j));
            }
        }
    }
    let all: Vec<Index> = {
        let mut v: Vec<Index> = positives.iter().chain(&negatives).copied().collect();
        v.sort_unstable();
        v
    };
    if all.is_empty() {
        return Err(Error::Input("no known entries to split".into()));
    }

    let mut rng = RandomSource::new(seed).rng();
    let mut draw = |pool: &[Index], what: &str| -> Result<Vec<Index>> {
        let count = (pool.len() as f64 * test_size).round() as usize;
        if count >= pool.len() {
            return Err(Error::Parameter(format!(
                "test_size {test_size} leaves no {what} entries for training"
            )));
        }
        Ok(sample(&mut rng, pool.len(), count).into_iter().map(|p| pool[p]).collect())
    };
    let mut test = if stratify {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::Input("stratified split needs known positives and negatives".into()));
        }
        let mut t = draw(&positives, "positive")?;
        t.extend(draw(&negatives, "negative")?);
        t
    } else {
        draw(&all, "known")?
    };
    test.sort_unstable();

    let mut mask = MaskMatrix::zeros(x.dim());
    for &ij in &all {
        mask[ij] = 1.0;
    }
    for &ij in &test {
        mask[ij] = 0.0;
    }
    let train: Vec<Index> = all.into_iter().filter(|&ij| mask[ij] > 0.0).collect();
    Ok(Split {
        test_size,
        seed,
        stratified: stratify,
        positives,
        negatives,
        train,
        test,
        mask,
    })
}

/// Reads a split written by [`Split::to_csv`] back into `(train, test)`.
pub fn read_split(path: impl AsRef<Path>) -> Result<(Vec<Index>, Vec<Index>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_split(&text, path)
}

pub fn parse_split(text: &str, path: &Path) -> Result<(Vec<Index>, Vec<Index>)> {
    let fail = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut seen = HashSet::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (no == 0 && line == "row,col,set") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [i, j, set] = fields[..] else {
            return Err(fail(no + 1, format!("expected row,col,set but found {line:?}")));
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| fail(no + 1, format!("bad index {s:?}")));
        let ij = (parse(i)?, parse(j)?);
        if !seen.insert(ij) {
            return Err(fail(no + 1, format!("entry ({}, {}) listed twice", ij.0, ij.1)));
        }
        match set {
            "train" => train.push(ij),
            "test" => test.push(ij),
            other => return Err(fail(no + 1, format!("set must be train or test, got {other:?}"))),
        }
    }
    if test.is_empty() {
        return Err(Error::Input(format!("{} lists no test entries", path.display())));
    }
    Ok((train, test))
}
