//! CSV (dense) and Matrix Market coordinate (sparse) readers and writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DenseMatrix;
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_finite(path: &Path, line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {token:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {token:?}")));
    }
    Ok(v)
}

/// Reads a headerless comma-separated matrix, one row per line.
pub fn read_csv(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| parse_finite(path, idx + 1, t))
            .collect::<Result<_>>()?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(parse_err(
                    path,
                    idx + 1,
                    format!("expected {c} fields, found {}", row.len()),
                ))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    DenseMatrix::from_shape_vec((rows, cols), values).map_err(|e| Error::Shape(e.to_string()))
}

pub(crate) fn format_value(v: f64) -> String {
    // Shortest representation that round-trips.
    format!("{v:?}")
}

pub(crate) fn csv_string(x: &DenseMatrix) -> String {
    let mut out = String::with_capacity(x.len() * 8);
    for row in x.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_value(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(path: impl AsRef<Path>, x: &DenseMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, csv_string(x)).map_err(|e| Error::io(path, e))
}

/// Coordinate-format sparse matrix with 0-based indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CooMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        self.entries.len() as f64 / (self.rows as f64 * self.cols as f64)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut x = DenseMatrix::zeros((self.rows, self.cols));
        for &(i, j, v) in &self.entries {
            x[[i, j]] = v;
        }
        x
    }

    pub fn from_dense(x: &DenseMatrix) -> Self {
        let entries = x
            .indexed_iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|((i, j), &v)| (i, j, v))
            .collect();
        Self {
            rows: x.nrows(),
            cols: x.ncols(),
            entries,
        }
    }
}

/// Reads a `%%MatrixMarket matrix coordinate real|integer|pattern general|symmetric` file.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<CooMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, banner) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let banner_lc = banner.to_ascii_lowercase();
    let fields: Vec<&str> = banner_lc.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(parse_err(path, 1, "missing MatrixMarket banner"));
    }
    if fields[2] != "coordinate" {
        return Err(parse_err(path, 1, "only coordinate format is supported"));
    }
    let pattern = match fields[3] {
        "real" | "integer" => false,
        "pattern" => true,
        other => return Err(parse_err(path, 1, format!("unsupported field {other}"))),
    };
    let symmetric = match fields[4] {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(path, 1, format!("unsupported symmetry {other}"))),
    };

    let mut header = None;
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let lineno = idx + 1;
        let parse_index = |t: &str| -> Result<usize> {
            t.parse::<usize>()
                .map_err(|_| parse_err(path, lineno, format!("bad index {t:?}")))
        };
        match header {
            None => {
                if toks.len() != 3 {
                    return Err(parse_err(path, lineno, "expected 'rows cols nnz'"));
                }
                header = Some((
                    parse_index(toks[0])?,
                    parse_index(toks[1])?,
                    parse_index(toks[2])?,
                ));
            }
            Some((rows, cols, _)) => {
                let need = if pattern { 2 } else { 3 };
                if toks.len() < need {
                    return Err(parse_err(path, lineno, "truncated entry"));
                }
                let (i, j) = (parse_index(toks[0])?, parse_index(toks[1])?);
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(parse_err(path, lineno, format!("index ({i}, {j}) out of range")));
                }
                let v = if pattern {
                    1.0
                } else {
                    parse_finite(path, lineno, toks[2])?
                };
                entries.push((i - 1, j - 1, v));
                if symmetric && i != j {
                    entries.push((j - 1, i - 1, v));
                }
            }
        }
    }
    let (rows, cols, nnz) = header.ok_or_else(|| parse_err(path, 1, "missing size line"))?;
    let stored = if symmetric {
        entries.iter().filter(|(i, j, _)| i >= j).count()
    } else {
        entries.len()
    };
    if stored != nnz {
        return Err(parse_err(
            path,
            1,
            format!("header declares {nnz} entries, found {stored}"),
        ));
    }
    Ok(CooMatrix {
        rows,
        cols,
        entries,
    })
}

pub fn write_matrix_market(path: impl AsRef<Path>, x: &CooMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", x.rows, x.cols, x.entries.len());
    for &(i, j, v) in &x.entries {
        let _ = writeln!(out, "{} {} {}", i + 1, j + 1, format_value(v));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let x = array![[1.0, 0.1 + 0.2], [-3.5e-12, 4.0]];
        write_csv(&p, &x).unwrap();
        assert_eq!(read_csv(&p).unwrap(), x);
    }

    #[test]
    fn csv_rejects_nan_and_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "1,2\n3,NaN\n").unwrap();
        assert!(matches!(read_csv(&p), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(read_csv(&p).is_err());
        fs::write(&p, "1,inf\n").unwrap();
        assert!(read_csv(&p).is_err());
    }

    #[test]
    fn matrix_market_round_trip_and_symmetric() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.mtx");
        let x = array![[0.0, 2.5], [1.0, 0.0], [0.0, 0.0]];
        let coo = CooMatrix::from_dense(&x);
        write_matrix_market(&p, &coo).unwrap();
        assert_eq!(read_matrix_market(&p).unwrap().to_dense(), x);

        fs::write(
            &p,
            "%%MatrixMarket matrix coordinate pattern symmetric\n% c\n3 3 2\n2 1\n3 3\n",
        )
        .unwrap();
        let m = read_matrix_market(&p).unwrap().to_dense();
        assert_eq!(m, array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
    }

    #[test]
    fn matrix_market_rejects_nan() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.mtx");
        fs::write(&p, "%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 nan\n").unwrap();
        assert!(read_matrix_market(&p).is_err());
    }
}
