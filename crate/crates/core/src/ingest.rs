//! Dataset ingestion: LIBSVM sparse text, dense CSV, normalization and
//! seeded splitting.
//!
//! Everything is held densely. L∞ perturbations touch every coordinate, so
//! sparsity would not survive an attack anyway.

pub mod synthetic;

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{AtroError, Result};
use crate::seed;

/// Binary label in `{-1, +1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Neg => Label::Pos,
            Label::Pos => Label::Neg,
        }
    }

    /// Label of a real score, with `sign(0) = +1`.
    pub fn of_score(v: f64) -> Label {
        if v >= 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Neg => -1,
            Label::Pos => 1,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Label::Neg),
            1 => Ok(Label::Pos),
            other => Err(format!("label must be -1 or +1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub d: usize,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    /// Builds a dataset, checking that every sample has dimension `d` and finite coordinates.
    pub fn new(name: impl Into<String>, samples: Vec<LabeledSample>) -> Result<Self> {
        let first = samples.first().ok_or(AtroError::EmptyDataset)?;
        let d = first.x.len();
        for s in &samples {
            if s.x.len() != d {
                return Err(AtroError::DimensionMismatch {
                    expected: d,
                    got: s.x.len(),
                });
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(AtroError::NonFinite("sample features".into()));
            }
        }
        Ok(Self {
            name: name.into(),
            d,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn subset(&self, idx: &[usize], suffix: &str) -> Dataset {
        Dataset {
            name: format!("{}{}", self.name, suffix),
            d: self.d,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Maps raw label tokens to `{-1, +1}`.
#[derive(Debug, Clone, Default)]
pub struct LabelMap {
    explicit: HashMap<String, Label>,
}

impl LabelMap {
    /// Accepts only numeric tokens equal to -1 or +1.
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Label)>) -> Self {
        Self {
            explicit: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn resolve(&self, token: &str) -> Option<Label> {
        if let Some(l) = self.explicit.get(token) {
            return Some(*l);
        }
        if !self.explicit.is_empty() {
            return None;
        }
        match token.parse::<f64>() {
            Ok(v) if v == 1.0 => Some(Label::Pos),
            Ok(v) if v == -1.0 => Some(Label::Neg),
            _ => None,
        }
    }
}

pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    parse_libsvm_with(text, &LabelMap::identity())
}

/// Parses `<label> <idx>:<val> ...` lines; indices are 1-based and strictly increasing.
/// Blank lines and `#` comments are skipped. Dimension is the largest index seen.
pub fn parse_libsvm_with(text: &str, labels: &LabelMap) -> Result<Dataset> {
    let mut rows: Vec<(Vec<(usize, f64)>, Label)> = Vec::new();
    let mut d = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let y = labels.resolve(label_tok).ok_or_else(|| AtroError::Parse {
            line,
            msg: format!("unknown label '{label_tok}'"),
        })?;
        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (i, v) = tok.split_once(':').ok_or_else(|| AtroError::Parse {
                line,
                msg: format!("expected <index>:<value>, got '{tok}'"),
            })?;
            let idx: usize = i.parse().map_err(|_| AtroError::Parse {
                line,
                msg: format!("bad index '{i}'"),
            })?;
            if idx == 0 {
                return Err(AtroError::Parse {
                    line,
                    msg: "indices are 1-based".into(),
                });
            }
            if idx == last {
                return Err(AtroError::Parse {
                    line,
                    msg: format!("duplicate index {idx}"),
                });
            }
            if idx < last {
                return Err(AtroError::Parse {
                    line,
                    msg: format!("indices not increasing ({idx} after {last})"),
                });
            }
            let val: f64 = v.parse().map_err(|_| AtroError::Parse {
                line,
                msg: format!("non-numeric value '{v}'"),
            })?;
            if !val.is_finite() {
                return Err(AtroError::Parse {
                    line,
                    msg: format!("non-finite value '{v}'"),
                });
            }
            last = idx;
            entries.push((idx, val));
        }
        d = d.max(last);
        rows.push((entries, y));
    }
    if rows.is_empty() {
        return Err(AtroError::EmptyDataset);
    }
    let samples = rows
        .into_iter()
        .map(|(entries, y)| {
            let mut x = vec![0.0; d];
            for (i, v) in entries {
                x[i - 1] = v;
            }
            LabeledSample { x, y }
        })
        .collect();
    Ok(Dataset {
        name: String::from("libsvm"),
        d,
        samples,
    })
}

/// Writes LIBSVM text, omitting zero coordinates. `f64`'s `Display` is
/// shortest-round-trip, so re-parsing yields the same values.
pub fn to_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for s in &ds.samples {
        out.push_str(match s.y {
            Label::Pos => "+1",
            Label::Neg => "-1",
        });
        for (i, v) in s.x.iter().enumerate() {
            if *v != 0.0 {
                let _ = write!(out, " {}:{}", i + 1, v);
            }
        }
        out.push('\n');
    }
    out
}

/// Dense CSV with a header row; the final column is the label.
pub fn parse_csv(text: &str, labels: &LabelMap) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut samples = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| AtroError::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() < 2 {
            return Err(AtroError::Parse {
                line,
                msg: "need at least one feature column and a label".into(),
            });
        }
        let label_tok = &rec[rec.len() - 1];
        let y = labels.resolve(label_tok).ok_or_else(|| AtroError::Parse {
            line,
            msg: format!("unknown label '{label_tok}'"),
        })?;
        let x = rec
            .iter()
            .take(rec.len() - 1)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| AtroError::Parse {
                        line,
                        msg: format!("non-numeric value '{f}'"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(LabeledSample { x, y });
    }
    Dataset::new("csv", samples).map_err(|e| match e {
        AtroError::DimensionMismatch { expected, got } => AtroError::Parse {
            line: 0,
            msg: format!("ragged rows: expected {expected} features, got {got}"),
        },
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormScheme {
    #[default]
    Minmax01,
    Zscore,
    None,
}

/// Per-dimension affine map `x ↦ (x − shift) · scale`, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub scheme: NormScheme,
    /// min (minmax01) or mean (zscore).
    pub shift: Vec<f64>,
    /// max − min (minmax01) or std (zscore); zero marks a constant dimension.
    pub spread: Vec<f64>,
}

impl NormStats {
    pub fn is_constant(&self, dim: usize) -> bool {
        self.spread[dim] == 0.0
    }

    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        match self.scheme {
            NormScheme::None => x.to_vec(),
            _ => x
                .iter()
                .zip(self.shift.iter().zip(&self.spread))
                .map(|(v, (s, w))| if *w == 0.0 { 0.0 } else { (v - s) / w })
                .collect(),
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.d != self.shift.len() {
            return Err(AtroError::DimensionMismatch {
                expected: self.shift.len(),
                got: ds.d,
            });
        }
        Ok(Dataset {
            name: ds.name.clone(),
            d: ds.d,
            samples: ds
                .samples
                .iter()
                .map(|s| LabeledSample {
                    x: self.apply_point(&s.x),
                    y: s.y,
                })
                .collect(),
        })
    }
}

/// Fits normalization statistics on `ds` and applies them.
pub fn normalize(ds: &Dataset, scheme: NormScheme) -> Result<(Dataset, NormStats)> {
    if ds.is_empty() {
        return Err(AtroError::EmptyDataset);
    }
    let n = ds.len() as f64;
    let (shift, spread) = match scheme {
        NormScheme::None => (vec![0.0; ds.d], vec![1.0; ds.d]),
        NormScheme::Minmax01 => {
            let mut lo = vec![f64::INFINITY; ds.d];
            let mut hi = vec![f64::NEG_INFINITY; ds.d];
            for s in &ds.samples {
                for (j, v) in s.x.iter().enumerate() {
                    lo[j] = lo[j].min(*v);
                    hi[j] = hi[j].max(*v);
                }
            }
            let spread = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
            (lo, spread)
        }
        NormScheme::Zscore => {
            let mut mean = vec![0.0; ds.d];
            for s in &ds.samples {
                crate::linalg::axpy(1.0 / n, &s.x, &mut mean);
            }
            let mut var = vec![0.0; ds.d];
            for s in &ds.samples {
                for (j, v) in s.x.iter().enumerate() {
                    var[j] += (v - mean[j]).powi(2) / n;
                }
            }
            (mean, var.into_iter().map(f64::sqrt).collect())
        }
    };
    let stats = NormStats { scheme, shift, spread };
    let out = stats.apply(ds)?;
    Ok((out, stats))
}

/// Seeded shuffle-and-cut; the train side gets `round(n · train_fraction)` samples.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(AtroError::InvalidSplit(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let n_train = (ds.len() as f64 * train_fraction).round() as usize;
    split_count(ds, n_train, seed)
}

/// Seeded shuffle-and-cut with an explicit training-set size.
pub fn split_count(ds: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.len() < 2 {
        return Err(AtroError::InvalidSplit(format!(
            "need at least 2 samples, got {}",
            ds.len()
        )));
    }
    if n_train == 0 || n_train >= ds.len() {
        return Err(AtroError::InvalidSplit(format!(
            "{n_train} training samples out of {} leaves an empty side",
            ds.len()
        )));
    }
    let idx = shuffled_indices(ds.len(), seed);
    let (a, b) = idx.split_at(n_train);
    Ok((ds.subset(a, "-train"), ds.subset(b, "-test")))
}

pub(crate) fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx
}

/// Seeded `k`-fold partition: returns `(train, validation)` pairs.
pub fn folds(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    if k < 2 || k > ds.len() {
        return Err(AtroError::InvalidSplit(format!("{k} folds for {} samples", ds.len())));
    }
    let idx = shuffled_indices(ds.len(), seed);
    let n = ds.len();
    Ok((0..k)
        .map(|f| {
            let lo = f * n / k;
            let hi = (f + 1) * n / k;
            let val: Vec<usize> = idx[lo..hi].to_vec();
            let train: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
            (
                ds.subset(&train, &format!("-fold{f}-train")),
                ds.subset(&val, &format!("-fold{f}-val")),
            )
        })
        .collect())
}
