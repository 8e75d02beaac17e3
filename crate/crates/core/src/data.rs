//! CSV ingestion, chronological splitting, normalization and windowing.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CsvOptions {
    /// Replace missing cells with the previous row's value instead of failing.
    pub fill_forward: bool,
}

/// A `T × N` multivariate series.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub names: Vec<String>,
    /// Parsed from a non-numeric first column, kept verbatim.
    pub timestamps: Option<Vec<String>>,
    /// `[T, N]`
    pub values: Tensor,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.shape()[1]
    }

    /// Builds a series from rows; names default to `v0, v1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).unwrap_or(0);
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("rows must be non-empty and rectangular".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(RawSeries {
            names: (0..n).map(|i| format!("v{i}")).collect(),
            timestamps: None,
            values: Tensor::new(vec![rows.len(), n], data)?,
        })
    }
}

pub fn load_csv(path: &Path, options: CsvOptions) -> Result<RawSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, options)
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok()
}

/// Missing cell: empty or an explicit NaN marker.
fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na")
}

/// Parses comma-separated text. A first row with a non-numeric cell is a
/// header; a first column that is non-numeric in data rows is a timestamp.
pub fn parse_csv(text: &str, options: CsvOptions) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push((line, rec.iter().map(str::to_string).collect::<Vec<_>>()));
    }
    let Some((first_line, first)) = records.first() else {
        return Err(Error::Parse { line: 1, msg: "empty file".into() });
    };
    let width = first.len();
    let has_header = first
        .iter()
        .enumerate()
        .any(|(i, c)| !is_missing(c) && parse_cell(c).is_none() && (i > 0 || width == 1));
    let data_start = usize::from(has_header);
    let Some((_, probe)) = records.get(data_start) else {
        return Err(Error::Parse { line: *first_line, msg: "no data rows".into() });
    };
    let has_timestamp = !probe[0].is_empty() && parse_cell(&probe[0]).is_none();
    let first_value_col = usize::from(has_timestamp);
    let n = width.saturating_sub(first_value_col);
    if n == 0 {
        return Err(Error::Parse { line: *first_line, msg: "no numeric columns".into() });
    }
    let names: Vec<String> = if has_header {
        first[first_value_col..].to_vec()
    } else {
        (0..n).map(|i| format!("v{i}")).collect()
    };

    let mut values: Vec<f64> = Vec::with_capacity(records.len() * n);
    let mut stamps = Vec::new();
    let mut rows = 0usize;
    for (line, rec) in &records[data_start..] {
        let line = *line;
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                msg: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        if has_timestamp {
            stamps.push(rec[0].clone());
        }
        for (j, cell) in rec[first_value_col..].iter().enumerate() {
            let v = if is_missing(cell) {
                if !options.fill_forward {
                    return Err(Error::Parse {
                        line,
                        msg: format!("missing value in column `{}`", names[j]),
                    });
                }
                if rows == 0 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("missing value in column `{}` with no earlier value to carry forward", names[j]),
                    });
                }
                values[(rows - 1) * n + j]
            } else {
                match parse_cell(cell) {
                    Some(v) if v.is_finite() => v,
                    _ => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("non-numeric value `{cell}` in column `{}`", names[j]),
                        })
                    }
                }
            };
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse { line: *first_line, msg: "no data rows".into() });
    }
    Ok(RawSeries {
        names,
        timestamps: has_timestamp.then_some(stamps),
        values: Tensor::new(vec![rows, n], values)?,
    })
}

/// Per-variable z-score statistics from the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl NormStats {
    /// Population mean/std per column of `[T, N]`.
    pub fn fit(values: &Tensor) -> Self {
        let (t, n) = (values.shape()[0], values.shape()[1]);
        let d = values.data();
        let mut mean = vec![0.0; n];
        let mut std = vec![0.0; n];
        for j in 0..n {
            let m = (0..t).map(|i| d[i * n + j]).sum::<f64>() / t as f64;
            let var = (0..t).map(|i| (d[i * n + j] - m).powi(2)).sum::<f64>() / t as f64;
            let mut s = var.sqrt();
            if s < STD_FLOOR {
                log::warn!("variable {j} is constant on the training split; using std floor {STD_FLOOR:e}");
                s = STD_FLOOR;
            }
            mean[j] = m;
            std[j] = s;
        }
        NormStats { mean, std }
    }

    pub fn n_vars(&self) -> usize {
        self.mean.len()
    }

    fn apply(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let n = self.mean.len();
        assert_eq!(x.shape().last(), Some(&n), "last axis must be the variable axis");
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, self.mean[i % n], self.std[i % n]))
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    /// Standardizes any tensor whose last axis is the variable axis.
    pub fn normalize(&self, x: &Tensor) -> Tensor {
        self.apply(x, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, x: &Tensor) -> Tensor {
        self.apply(x, |v, m, s| v * s + m)
    }
}

/// Normalized train/val/test splits.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Tensor,
    pub val: Tensor,
    pub test: Tensor,
    /// Row offsets of each split in the source series.
    pub offsets: [usize; 3],
}

/// Chronological split by `ratios`, standardized with training statistics
/// (or `stats` when given). Each split must hold at least `min_len` rows.
pub fn split_normalize(
    values: &Tensor,
    ratios: [f64; 3],
    stats: Option<&NormStats>,
    min_len: usize,
) -> Result<(Splits, NormStats)> {
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let (t, n) = (values.shape()[0], values.shape()[1]);
    // the tolerance keeps 720 * 0.7 at 504 rather than 503
    let part = |r: f64| (t as f64 * r + 1e-9).floor() as usize;
    let (n_train, n_val) = (part(ratios[0]), part(ratios[1]));
    let n_test = t - n_train - n_val;
    for (name, len) in [("train", n_train), ("validation", n_val), ("test", n_test)] {
        if len < min_len {
            return Err(Error::Config(format!(
                "{name} split has {len} rows but one window needs {min_len}"
            )));
        }
    }
    let rows = |start: usize, len: usize| {
        Tensor::new(vec![len, n], values.data()[start * n..(start + len) * n].to_vec())
            .expect("in bounds")
    };
    let train_raw = rows(0, n_train);
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(&train_raw),
    };
    let splits = Splits {
        train: stats.normalize(&train_raw),
        val: stats.normalize(&rows(n_train, n_val)),
        test: stats.normalize(&rows(n_train + n_val, n_test)),
        offsets: [0, n_train, n_train + n_val],
    };
    Ok((splits, stats))
}

/// Start offsets of (input, target) windows over a series.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowSet {
    pub seq_len: usize,
    pub pred_len: usize,
    pub stride: usize,
    offsets: Vec<usize>,
}

impl WindowSet {
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Windows at `0, stride, 2·stride, …`; there are `⌊(T−S−P)/stride⌋ + 1`.
pub fn make_windows(series_len: usize, seq_len: usize, pred_len: usize, stride: usize) -> Result<WindowSet> {
    if stride == 0 || seq_len == 0 || pred_len == 0 {
        return Err(Error::Config("seq_len, pred_len and stride must be >= 1".into()));
    }
    if seq_len + pred_len > series_len {
        return Err(Error::Config(format!(
            "series of length {series_len} is shorter than one window ({seq_len} + {pred_len})"
        )));
    }
    let offsets = (0..=series_len - seq_len - pred_len).step_by(stride).collect();
    Ok(WindowSet {
        seq_len,
        pred_len,
        stride,
        offsets,
    })
}

/// A series paired with its windows.
#[derive(Clone, Debug)]
pub struct Windowed {
    series: Tensor,
    windows: WindowSet,
}

impl Windowed {
    /// `series: [T, N]`.
    pub fn new(series: Tensor, seq_len: usize, pred_len: usize, stride: usize) -> Result<Self> {
        if series.rank() != 2 {
            return Err(Error::Shape(format!("series must be [T,N], got {:?}", series.shape())));
        }
        let windows = make_windows(series.shape()[0], seq_len, pred_len, stride)?;
        Ok(Windowed { series, windows })
    }

    pub fn series(&self) -> &Tensor {
        &self.series
    }

    pub fn windows(&self) -> &WindowSet {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.series.shape()[1]
    }

    fn rows(&self, start: usize, len: usize) -> &[f64] {
        let n = self.n_vars();
        &self.series.data()[start * n..(start + len) * n]
    }

    /// Inputs `[B,S,N]` and targets `[B,P,N]` for the given window indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let (s, p, n) = (self.windows.seq_len, self.windows.pred_len, self.n_vars());
        let mut x = Vec::with_capacity(indices.len() * s * n);
        let mut y = Vec::with_capacity(indices.len() * p * n);
        for &i in indices {
            let o = self.windows.offsets[i];
            x.extend_from_slice(self.rows(o, s));
            y.extend_from_slice(self.rows(o + s, p));
        }
        (
            Tensor::new(vec![indices.len(), s, n], x).expect("window shape"),
            Tensor::new(vec![indices.len(), p, n], y).expect("window shape"),
        )
    }

    /// All window inputs stacked, `[W,S,N]`.
    pub fn all_inputs(&self) -> Tensor {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx).0
    }

    pub fn batches(&self, batch_size: usize, shuffle: bool, seed: u64) -> BatchIter<'_> {
        BatchIter {
            source: self,
            order: batch_order(self.len(), batch_size, shuffle, seed),
            next: 0,
        }
    }
}

/// Window indices grouped into batches of `batch_size`; the last batch may be
/// shorter. Shuffling is a seeded permutation.
pub fn batch_order(count: usize, batch_size: usize, shuffle: bool, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be >= 1");
    let mut idx: Vec<usize> = (0..count).collect();
    if shuffle {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Yields `([B,S,N], [B,P,N])` batches.
pub struct BatchIter<'a> {
    source: &'a Windowed,
    order: Vec<Vec<usize>>,
    next: usize,
}

impl BatchIter<'_> {
    pub fn order(&self) -> &[Vec<usize>] {
        &self.order
    }
}

impl Iterator for BatchIter<'_> {
    type Item = (Tensor, Tensor);

    fn next(&mut self) -> Option<Self::Item> {
        let idx = self.order.get(self.next)?;
        self.next += 1;
        Some(self.source.batch(idx))
    }
}
