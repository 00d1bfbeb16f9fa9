//! Model directories: `W.csv`, `H.csv`, optional `biases.csv`, `metadata.json`.

use std::fs;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::{FactorModel, Factors, ModelKind, SolverOptions};
use crate::boolean::ThresholdPair;
use crate::error::{Error, Result};
use crate::matrix::{read_csv, write_csv, BoolMatrix};

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: ModelKind,
    k: usize,
    rows: usize,
    cols: usize,
    boolean: bool,
    options: SolverOptions,
    final_objective: f64,
    iterations: usize,
    converged: bool,
    global_offset: Option<f64>,
    thresholds: Option<ThresholdPair>,
    degenerate_components: Vec<usize>,
}

pub fn save_model(dir: impl AsRef<Path>, model: &FactorModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(dir.join("W.csv"), &model.factors.w())?;
    write_csv(dir.join("H.csv"), &model.factors.h())?;
    if model.row_bias.is_some() || model.col_bias.is_some() {
        let mut out = String::from("axis,index,value\n");
        for (axis, bias) in [("row", &model.row_bias), ("col", &model.col_bias)] {
            if let Some(b) = bias {
                for (i, v) in b.iter().enumerate() {
                    out.push_str(&format!("{axis},{i},{v:?}\n"));
                }
            }
        }
        let path = dir.join("biases.csv");
        fs::write(&path, out).map_err(|e| Error::io(path, e))?;
    }
    let (rows, cols) = model.factors.shape();
    let meta = Metadata {
        kind: model.kind,
        k: model.rank(),
        rows,
        cols,
        boolean: model.factors.is_boolean(),
        options: model.options.clone(),
        final_objective: model.final_objective(),
        iterations: model.iterations,
        converged: model.converged,
        global_offset: model.global_offset,
        thresholds: model.thresholds.clone(),
        degenerate_components: model.degenerate_components.clone(),
    };
    let path = dir.join("metadata.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(path, e))
}

/// Reads a model directory back. The objective trace is not stored; the
/// loaded model carries only the final objective.
pub fn load_model(dir: impl AsRef<Path>) -> Result<FactorModel> {
    let dir = dir.as_ref();
    let path = dir.join("metadata.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Metadata = serde_json::from_str(&text)?;
    let w = read_csv(dir.join("W.csv"))?;
    let h = read_csv(dir.join("H.csv"))?;
    if w.dim() != (meta.rows, meta.k) || h.dim() != (meta.k, meta.cols) {
        return Err(Error::Shape("factor files disagree with metadata".into()));
    }
    let factors = if meta.boolean {
        Factors::Boolean {
            w: BoolMatrix::from_dense(&w)?,
            h: BoolMatrix::from_dense(&h)?,
        }
    } else {
        Factors::Real { w, h }
    };

    let (mut row_bias, mut col_bias) = (None, None);
    let bias_path = dir.join("biases.csv");
    if bias_path.exists() {
        let text = fs::read_to_string(&bias_path).map_err(|e| Error::io(&bias_path, e))?;
        let mut rb = Array1::zeros(meta.rows);
        let mut cb = Array1::zeros(meta.cols);
        let (mut saw_row, mut saw_col) = (false, false);
        for (lineno, line) in text.lines().enumerate().skip(1) {
            let parse_err = |message: String| Error::Parse {
                path: bias_path.clone(),
                line: lineno + 1,
                message,
            };
            let parts: Vec<&str> = line.split(',').collect();
            let [axis, idx, val] = parts.as_slice() else {
                return Err(parse_err(format!("expected 3 fields, got {}", parts.len())));
            };
            let idx: usize = idx.trim().parse().map_err(|_| parse_err(format!("bad index {idx:?}")))?;
            let val: f64 = val.trim().parse().map_err(|_| parse_err(format!("bad value {val:?}")))?;
            let target = match *axis {
                "row" => {
                    saw_row = true;
                    &mut rb
                }
                "col" => {
                    saw_col = true;
                    &mut cb
                }
                other => return Err(parse_err(format!("unknown axis {other:?}"))),
            };
            *target
                .get_mut(idx)
                .ok_or_else(|| parse_err(format!("index {idx} out of range")))? = val;
        }
        row_bias = saw_row.then_some(rb);
        col_bias = saw_col.then_some(cb);
    }

    Ok(FactorModel {
        kind: meta.kind,
        factors,
        row_bias,
        col_bias,
        global_offset: meta.global_offset,
        trace: vec![meta.final_objective],
        iterations: meta.iterations,
        converged: meta.converged,
        options: meta.options,
        thresholds: meta.thresholds,
        degenerate_components: meta.degenerate_components,
    })
}
