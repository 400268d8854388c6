//! LibSVM-format sparse datasets.
//!
//! One sample per line: `<label> <index>:<value> ...` with 1-based, strictly
//! increasing indices. `#` starts a comment and blank lines are skipped.

use std::fmt::Write as _;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;

use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// Where the mushrooms dataset is published.
pub const MUSHROOMS_URL: &str = "https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/binary/mushrooms";

/// Sparse rows of `(index, value)` pairs with one label per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseDataset {
    pub rows: Vec<Vec<(u32, f64)>>,
    pub labels: Vec<f64>,
    pub n_features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelScheme {
    PlusMinusOne,
    ZeroOne,
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<(f64, Vec<(u32, f64)>)>> {
    let err = |msg: String| Error::Parse { line: lineno, msg };
    let content = match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    };
    let mut tokens = content.split_ascii_whitespace();
    let Some(label_tok) = tokens.next() else {
        return Ok(None);
    };
    let label: f64 = label_tok
        .parse()
        .map_err(|_| err(format!("label {label_tok:?} is not a number")))?;
    if !label.is_finite() {
        return Err(err(format!("label {label_tok:?} is not finite")));
    }
    let mut entries = Vec::new();
    let mut last = 0u32;
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("token {tok:?} is not an index:value pair")))?;
        let idx: i64 = idx
            .parse()
            .map_err(|_| err(format!("index {idx:?} is not an integer")))?;
        if idx <= 0 || idx > u32::MAX as i64 {
            return Err(err(format!("index {idx} out of range (indices are 1-based)")));
        }
        let idx = idx as u32;
        if idx <= last {
            return Err(err(format!("index {idx} does not increase (previous {last})")));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| err(format!("value {val:?} is not a number")))?;
        if !val.is_finite() {
            return Err(err(format!("value {val:?} is not finite")));
        }
        entries.push((idx, val));
        last = idx;
    }
    Ok(Some((label, entries)))
}

/// Parses LibSVM text. `n_features` is the largest index seen.
pub fn parse_libsvm(text: &str) -> Result<SparseDataset> {
    let mut ds = SparseDataset::default();
    for (i, line) in text.lines().enumerate() {
        ds.push_line(line, i + 1)?;
    }
    Ok(ds)
}

pub fn parse_libsvm_reader<R: BufRead>(reader: R) -> Result<SparseDataset> {
    let mut ds = SparseDataset::default();
    for (i, line) in reader.lines().enumerate() {
        ds.push_line(&line?, i + 1)?;
    }
    Ok(ds)
}

pub fn read_libsvm_file(path: impl AsRef<Path>) -> Result<SparseDataset> {
    let file = fs::File::open(path)?;
    parse_libsvm_reader(std::io::BufReader::new(file))
}

impl SparseDataset {
    fn push_line(&mut self, line: &str, lineno: usize) -> Result<()> {
        if let Some((label, entries)) = parse_line(line, lineno)? {
            if let Some(&(idx, _)) = entries.last() {
                self.n_features = self.n_features.max(idx as usize);
            }
            self.labels.push(label);
            self.rows.push(entries);
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Widens the feature space for datasets with trailing all-zero features.
    pub fn with_n_features(mut self, n_features: usize) -> Result<Self> {
        if n_features < self.n_features {
            return Err(Error::config(format!(
                "n_features {n_features} is below the largest index {}",
                self.n_features
            )));
        }
        self.n_features = n_features;
        Ok(self)
    }

    /// Serializes back to LibSVM text.
    pub fn to_libsvm_string(&self) -> String {
        let mut out = String::new();
        for (label, row) in self.labels.iter().zip(&self.rows) {
            write!(out, "{label}").unwrap();
            for (idx, val) in row {
                write!(out, " {idx}:{val}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Maps two distinct raw labels to `{-1, +1}` or `{0, 1}`, smaller first.
    pub fn map_labels(&self, scheme: LabelScheme) -> Result<Self> {
        let mut distinct: Vec<f64> = self.labels.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() != 2 {
            return Err(Error::config(format!(
                "label mapping needs exactly two distinct labels, found {}",
                distinct.len()
            )));
        }
        let (neg, pos) = match scheme {
            LabelScheme::PlusMinusOne => (-1.0, 1.0),
            LabelScheme::ZeroOne => (0.0, 1.0),
        };
        let labels = self
            .labels
            .iter()
            .map(|&l| if l == distinct[0] { neg } else { pos })
            .collect();
        Ok(Self {
            rows: self.rows.clone(),
            labels,
            n_features: self.n_features,
        })
    }

    /// Seeded sample of `n` rows without replacement, in original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n > self.n_rows() {
            return Err(Error::config(format!(
                "cannot subsample {n} rows from {}",
                self.n_rows()
            )));
        }
        let mut rng = rng_for(seed, 0);
        let mut picked = index::sample(&mut rng, self.n_rows(), n).into_vec();
        picked.sort_unstable();
        Ok(Self {
            rows: picked.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: picked.iter().map(|&i| self.labels[i]).collect(),
            n_features: self.n_features,
        })
    }

    /// Scales every nonzero row to unit Euclidean norm.
    pub fn normalize_rows(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter().map(|&(i, v)| (i, v / norm)).collect()
                } else {
                    row.clone()
                }
            })
            .collect();
        Self {
            rows,
            labels: self.labels.clone(),
            n_features: self.n_features,
        }
    }

    /// Dense `n_rows x n_features` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows(), self.n_features);
        for (r, row) in self.rows.iter().enumerate() {
            for &(idx, val) in row {
                m[(r, idx as usize - 1)] = val;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_line() {
        let ds = parse_libsvm("+1 1:0.5 3:1\n").unwrap();
        assert_eq!(ds.n_rows(), 1);
        assert_eq!(ds.labels, vec![1.0]);
        assert_eq!(ds.rows[0], vec![(1, 0.5), (3, 1.0)]);
        assert_eq!(ds.n_features, 3);
    }

    #[test]
    fn empty_input() {
        let ds = parse_libsvm("").unwrap();
        assert_eq!(ds.n_rows(), 0);
        assert_eq!(ds.n_features, 0);
    }

    #[test]
    fn comments_and_blank_lines() {
        let ds = parse_libsvm("# header\n\n-1 2:1 # trailing\n  \n1\n").unwrap();
        assert_eq!(ds.labels, vec![-1.0, 1.0]);
        assert_eq!(ds.rows[1], vec![]);
        assert_eq!(ds.n_features, 2);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, line) in [
            ("1 1:1\nx 1:1\n", 2),
            ("1 1:1\n1 2:1 2:3\n", 2),
            ("1 0:1\n", 1),
            ("1 -3:1\n", 1),
            ("\n\n1 1:a\n", 3),
            ("1 1\n", 1),
            ("1 1:nan\n", 1),
        ] {
            match parse_libsvm(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn n_features_override() {
        let ds = parse_libsvm("1 2:1\n").unwrap();
        assert_eq!(ds.clone().with_n_features(5).unwrap().n_features, 5);
        assert!(ds.with_n_features(1).is_err());
    }

    #[test]
    fn label_mapping() {
        let ds = parse_libsvm("2 1:1\n1 1:1\n2 1:1\n").unwrap();
        assert_eq!(ds.map_labels(LabelScheme::PlusMinusOne).unwrap().labels, vec![1.0, -1.0, 1.0]);
        assert_eq!(ds.map_labels(LabelScheme::ZeroOne).unwrap().labels, vec![1.0, 0.0, 1.0]);
        let three = parse_libsvm("1\n2\n3\n").unwrap();
        assert!(three.map_labels(LabelScheme::ZeroOne).is_err());
    }

    #[test]
    fn subsampling() {
        let ds = parse_libsvm("1 1:1\n2 2:1\n1 3:1\n2 4:1\n").unwrap();
        let all = ds.subsample(4, 3).unwrap();
        assert_eq!(all, ds);
        let one = ds.subsample(1, 3).unwrap();
        assert_eq!(one.n_rows(), 1);
        assert!(ds.rows.contains(&one.rows[0]));
        assert_eq!(one.n_features, 4);
        assert_eq!(ds.subsample(2, 11).unwrap(), ds.subsample(2, 11).unwrap());
        assert!(ds.subsample(5, 0).is_err());
        assert!(ds.subsample(0, 0).is_err());
    }

    #[test]
    fn dense_and_normalized() {
        let ds = parse_libsvm("1 1:3 3:4\n-1\n").unwrap();
        let m = ds.to_dense();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m[(0, 2)], 4.0);
        let n = ds.normalize_rows();
        assert_eq!(n.rows[0], vec![(1, 0.6), (3, 0.8)]);
        assert!(n.rows[1].is_empty());
    }

    fn arb_line() -> impl Strategy<Value = (f64, Vec<(u32, f64)>)> {
        (
            prop_oneof![Just(-1.0), Just(1.0), -1e6f64..1e6],
            prop::collection::btree_map(1u32..5000, -1e9f64..1e9, 0..12),
        )
            .prop_map(|(l, m)| (l, m.into_iter().collect()))
    }

    proptest! {
        #[test]
        fn round_trip(lines in prop::collection::vec(arb_line(), 0..40)) {
            let ds = SparseDataset {
                n_features: lines.iter().flat_map(|(_, r)| r.last()).map(|&(i, _)| i as usize).max().unwrap_or(0),
                labels: lines.iter().map(|(l, _)| *l).collect(),
                rows: lines.into_iter().map(|(_, r)| r).collect(),
            };
            let text = ds.to_libsvm_string();
            let back = parse_libsvm(&text).unwrap();
            prop_assert_eq!(&back, &ds);
            for row in &back.rows {
                prop_assert!(row.iter().all(|&(i, _)| i >= 1 && i as usize <= back.n_features));
            }
        }
    }
}
