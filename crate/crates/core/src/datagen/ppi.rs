//! Labeled protein–protein interaction edge lists.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::{CooMatrix, DenseMatrix, MaskMatrix};

/// Proteins with fewer labeled partners than this are pruned.
pub const MIN_PARTNERS: usize = 5;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PpiStats {
    pub records: usize,
    pub duplicate_records: usize,
    pub self_pairs: usize,
    pub conflicting_pairs: usize,
    pub proteins_before_pruning: usize,
    pub pruned_proteins: usize,
    pub proteins: usize,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
}

/// A symmetric labeled interaction set kept in coordinate form, since
/// realistic protein counts make a dense square matrix impractical.
#[derive(Clone, Debug, PartialEq)]
pub struct PpiData {
    /// Protein identifiers, sorted; a protein's index is its position.
    pub proteins: Vec<String>,
    /// Labeled pairs `(i, j, interacts)` with `i < j`, sorted.
    pub pairs: Vec<(usize, usize, bool)>,
    pub stats: PpiStats,
}

impl PpiData {
    pub fn len(&self) -> usize {
        self.proteins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proteins.is_empty()
    }

    /// Symmetric coordinate lists of links (X) and of labeled pairs (M).
    pub fn to_coo(&self) -> (CooMatrix, CooMatrix) {
        let n = self.len();
        let mut x = Vec::new();
        let mut m = Vec::with_capacity(2 * self.pairs.len());
        for &(i, j, link) in &self.pairs {
            m.push((i, j, 1.0));
            m.push((j, i, 1.0));
            if link {
                x.push((i, j, 1.0));
                x.push((j, i, 1.0));
            }
        }
        (
            CooMatrix { rows: n, cols: n, entries: x },
            CooMatrix { rows: n, cols: n, entries: m },
        )
    }

    /// Dense `(X, M)`; only sensible for modest protein counts.
    pub fn to_dense(&self) -> (DenseMatrix, MaskMatrix) {
        let (x, m) = self.to_coo();
        (x.to_dense(), m.to_dense())
    }

    /// Drops proteins with fewer than `min_partners` labeled partners,
    /// repeating until every survivor qualifies, and reindexes.
    pub fn prune(&self, min_partners: usize) -> PpiData {
        let mut alive = vec![true; self.len()];
        loop {
            let mut degree = vec![0usize; self.len()];
            for &(i, j, _) in &self.pairs {
                if alive[i] && alive[j] {
                    degree[i] += 1;
                    degree[j] += 1;
                }
            }
            let mut changed = false;
            for (p, d) in degree.iter().enumerate() {
                if alive[p] && *d < min_partners {
                    alive[p] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let mut remap = vec![usize::MAX; self.len()];
        let mut proteins = Vec::new();
        for (p, name) in self.proteins.iter().enumerate() {
            if alive[p] {
                remap[p] = proteins.len();
                proteins.push(name.clone());
            }
        }
        let pairs: Vec<(usize, usize, bool)> = self
            .pairs
            .iter()
            .filter(|&&(i, j, _)| alive[i] && alive[j])
            .map(|&(i, j, l)| (remap[i], remap[j], l))
            .collect();
        let mut stats = self.stats.clone();
        stats.pruned_proteins += self.len() - proteins.len();
        stats.proteins = proteins.len();
        stats.positive_pairs = pairs.iter().filter(|p| p.2).count();
        stats.negative_pairs = pairs.len() - stats.positive_pairs;
        PpiData { proteins, pairs, stats }
    }
}

/// Reads an edge list and applies the conflict and degree rules.
pub fn load_ppi_edgelist(path: impl AsRef<Path>) -> Result<PpiData> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ppi_edgelist(&text, path)
}

/// Parses `id1 <sep> id2 <sep> label` lines where the separator is a tab
/// or a comma and the label is 0 or 1. Blank lines and lines starting with
/// `#` are skipped. A pair labeled both ways is dropped; repeated
/// consistent records collapse to one.
pub fn parse_ppi_edgelist(text: &str, path: &Path) -> Result<PpiData> {
    let mut stats = PpiStats::default();
    let mut labels: BTreeMap<(String, String), Option<bool>> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: PathBuf::from(path),
            line: lineno + 1,
            message,
        };
        let sep = if line.contains('\t') { '\t' } else { ',' };
        let fields: Vec<&str> = line.split(sep).map(str::trim).collect();
        let [a, b, label] = fields.as_slice() else {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        };
        if a.is_empty() || b.is_empty() {
            return Err(err("empty protein identifier".into()));
        }
        let link = match *label {
            "1" => true,
            "0" => false,
            other => return Err(err(format!("label must be 0 or 1, found {other:?}"))),
        };
        stats.records += 1;
        if a == b {
            stats.self_pairs += 1;
            continue;
        }
        let key = if a < b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        match labels.get_mut(&key) {
            None => {
                labels.insert(key, Some(link));
            }
            Some(slot) => match *slot {
                Some(prev) if prev == link => stats.duplicate_records += 1,
                Some(_) => *slot = None,
                None => {}
            },
        }
    }
    stats.conflicting_pairs = labels.values().filter(|v| v.is_none()).count();

    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names: Vec<&str> = labels
        .iter()
        .filter(|(_, v)| v.is_some())
        .flat_map(|((a, b), _)| [a.as_str(), b.as_str()])
        .collect();
    names.sort_unstable();
    names.dedup();
    for (i, n) in names.iter().enumerate() {
        index.insert(n, i);
    }
    let mut pairs: Vec<(usize, usize, bool)> = labels
        .iter()
        .filter_map(|((a, b), v)| v.map(|l| (index[a.as_str()], index[b.as_str()], l)))
        .map(|(i, j, l)| (i.min(j), i.max(j), l))
        .collect();
    pairs.sort_unstable();
    stats.proteins_before_pruning = names.len();
    let data = PpiData {
        proteins: names.into_iter().map(String::from).collect(),
        pairs,
        stats,
    };
    Ok(data.prune(MIN_PARTNERS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write;

    fn parse(text: &str) -> Result<PpiData> {
        parse_ppi_edgelist(text, Path::new("test.tsv"))
    }

    /// A hub `h` linked to `p0..p{n-1}` plus a ring among the partners so
    /// everyone clears the degree bar.
    fn dense_block(prefix: &str, n: usize) -> String {
        let mut s = String::new();
        for i in 0..n {
            for j in (i + 1)..n {
                writeln!(s, "{prefix}{i}\t{prefix}{j}\t{}", (i + j) % 2).unwrap();
            }
        }
        s
    }

    #[test]
    fn conflicting_pairs_are_dropped() {
        let mut text = dense_block("p", 7);
        text.push_str("p0\tp1\t1\np1\tp0\t0\n");
        let data = parse(&text).unwrap();
        assert_eq!(data.stats.conflicting_pairs, 1);
        let (a, b) = (0, 1);
        assert!(!data.pairs.iter().any(|&(i, j, _)| i == a && j == b));
    }

    #[test]
    fn sparse_proteins_are_pruned() {
        let mut text = dense_block("p", 7);
        text.push_str("q\tp0\t1\nq\tp1\t0\nq\tp2\t1\n");
        let data = parse(&text).unwrap();
        assert!(!data.proteins.contains(&"q".to_string()));
        assert_eq!(data.len(), 7);
        assert_eq!(data.stats.pruned_proteins, 1);
    }

    #[test]
    fn pruning_is_a_fixed_point() {
        let mut text = dense_block("p", 8);
        // A chain whose removal cascades.
        for i in 0..5 {
            writeln!(text, "c{i}\tp{i}\t1").unwrap();
            writeln!(text, "c{i}\tc{}\t0", i + 1).unwrap();
        }
        let data = parse(&text).unwrap();
        assert_eq!(data.prune(MIN_PARTNERS), data);
    }

    #[test]
    fn duplicates_collapse_and_separators_mix() {
        let mut text = String::from("# header comment\n\n");
        text.push_str(&dense_block("p", 6).replace('\t', ","));
        text.push_str("p0,p1,1\np1\tp0\t1\n");
        let data = parse(&text).unwrap();
        assert_eq!(data.stats.duplicate_records, 2);
        assert_eq!(data.pairs.len(), 15);
        let (x, m) = data.to_dense();
        assert_eq!(x, x.t());
        assert_eq!(m.sum(), 30.0);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        match parse("a\tb\t1\nbroken line\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse("a\tb\t2\n") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("label"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
