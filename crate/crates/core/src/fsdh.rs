//! First and second derivative heatmaps.
//!
//! Differences are front-padded with zeros so every map keeps length S. The
//! second difference is taken over the valid part of the first, so it carries
//! two leading zeros. The `[B,N,2,S]` heatmap goes through two 3×3 conv layers
//! per variable, a learned contraction over (channel × derivative), and a
//! shared S→P linear head.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::HeatmapFormat;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::{add_row_bias, init_uniform, Binder, ParamStore};
use crate::tensor::{Padding, Tape, Tensor, Var};

const K: usize = 3;

fn seq_axis_len(tape: &Tape, x: Var, need: usize, what: &str) -> Result<usize> {
    let &[_, s, _] = tape.shape(x) else {
        return Err(Error::Shape(format!("{what} expects [B,S,N], got {:?}", tape.shape(x))));
    };
    if s < need {
        return Err(Error::InputTooShort(format!("{what} needs S >= {need}, got {s}")));
    }
    Ok(s)
}

/// `out[0] = 0`, `out[t] = x[t] − x[t−1]`.
pub fn first_difference(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = seq_axis_len(tape, x, 2, "first_difference")?;
    let ahead = tape.slice(x, 1, 1, s)?;
    let behind = tape.slice(x, 1, 0, s - 1)?;
    let d = tape.sub(ahead, behind)?;
    tape.pad(d, 1, 1, 0)
}

/// Difference of a front-padded first difference: positions 0 and 1 are
/// zero, `out[t] = d1[t] − d1[t−1]` for `t ≥ 2`.
pub fn second_difference(tape: &mut Tape, d1: Var) -> Result<Var> {
    let s = seq_axis_len(tape, d1, 3, "second_difference")?;
    let ahead = tape.slice(d1, 1, 2, s)?;
    let behind = tape.slice(d1, 1, 1, s - 1)?;
    let d = tape.sub(ahead, behind)?;
    tape.pad(d, 1, 2, 0)
}

/// Stacks `[B,S,N]` differences into `[B,N,2,S]` (D1 at index 0).
pub fn build_heatmap(tape: &mut Tape, d1: Var, d2: Var) -> Result<Var> {
    if tape.shape(d1) != tape.shape(d2) {
        return Err(Error::Shape(format!(
            "heatmap inputs differ: {:?} vs {:?}",
            tape.shape(d1),
            tape.shape(d2)
        )));
    }
    let a = tape.permute(d1, &[0, 2, 1])?;
    let b = tape.permute(d2, &[0, 2, 1])?;
    tape.stack(&[a, b], 2)
}

/// Derivative heatmap `[B, N, 2, S]`; row 0 holds D1, row 1 holds D2.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap2D {
    tensor: Tensor,
}

impl Heatmap2D {
    /// Validates shape and the zero-padding positions.
    pub fn new(tensor: Tensor) -> Result<Self> {
        let &[b, n, 2, s] = tensor.shape() else {
            return Err(Error::Shape(format!("heatmap must be [B,N,2,S], got {:?}", tensor.shape())));
        };
        if s < 2 {
            return Err(Error::Shape(format!("heatmap time axis too short: {s}")));
        }
        for bi in 0..b {
            for ni in 0..n {
                let pads = [[bi, ni, 0, 0], [bi, ni, 1, 0], [bi, ni, 1, 1]];
                if pads.iter().any(|ix| tensor.get(ix) != 0.0) {
                    return Err(Error::Contract(format!(
                        "heatmap padding cells are not zero for batch {bi}, variable {ni}"
                    )));
                }
            }
        }
        Ok(Heatmap2D { tensor })
    }

    /// Heatmap of `x: [B,S,N]`.
    pub fn from_series(x: &Tensor) -> Result<Self> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let d1 = first_difference(&mut tape, v)?;
        let d2 = second_difference(&mut tape, d1)?;
        let h = build_heatmap(&mut tape, d1, d2)?;
        Heatmap2D::new(tape.value(h).clone())
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.tensor.shape();
        (s[0], s[1], s[3])
    }

    /// Row `derivative` (0 or 1) of block `(batch, var)`.
    pub fn row(&self, batch: usize, var: usize, derivative: usize) -> &[f64] {
        let (_, n, s) = self.dims();
        let start = ((batch * n + var) * 2 + derivative) * s;
        &self.tensor.data()[start..start + s]
    }

    /// CSV text: per (batch, variable) a `# batch=.. variable=..` line, a
    /// `derivative,0,1,..` header, then rows `d1,...` and `d2,...`.
    /// Values use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let (b, n, s) = self.dims();
        let mut out = String::new();
        for bi in 0..b {
            for ni in 0..n {
                if !out.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "# batch={bi} variable={ni}");
                out.push_str("derivative");
                for t in 0..s {
                    let _ = write!(out, ",{t}");
                }
                out.push('\n');
                for (d, label) in ["d1", "d2"].iter().enumerate() {
                    out.push_str(label);
                    for v in self.row(bi, ni, d) {
                        let _ = write!(out, ",{v}");
                    }
                    out.push('\n');
                }
            }
        }
        out
    }

    /// Inverse of [`Heatmap2D::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut blocks: Vec<(usize, usize, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut current: Option<(usize, usize)> = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let perr = |line: usize, msg: &str| Error::Parse { line: line + 1, msg: msg.to_string() };
        let mut flush = |cur: Option<(usize, usize)>, rows: &mut Vec<Vec<f64>>, line: usize| -> Result<()> {
            if let Some((b, n)) = cur {
                if rows.len() != 2 {
                    return Err(perr(line, "heatmap block needs exactly two rows"));
                }
                let d2 = rows.pop().unwrap();
                let d1 = rows.pop().unwrap();
                blocks.push((b, n, d1, d2));
            }
            Ok(())
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("derivative") {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                flush(current.take(), &mut rows, i)?;
                let mut b = None;
                let mut n = None;
                for part in rest.split_whitespace() {
                    if let Some(v) = part.strip_prefix("batch=") {
                        b = v.parse().ok();
                    } else if let Some(v) = part.strip_prefix("variable=") {
                        n = v.parse().ok();
                    }
                }
                current = Some((b.ok_or_else(|| perr(i, "missing batch"))?, n.ok_or_else(|| perr(i, "missing variable"))?));
                continue;
            }
            let mut cells = line.split(',');
            let label = cells.next().unwrap_or("");
            if label != "d1" && label != "d2" {
                return Err(perr(i, "expected a d1 or d2 row"));
            }
            let values = cells
                .map(|c| c.trim().parse::<f64>().map_err(|_| perr(i, "non-numeric cell")))
                .collect::<Result<Vec<_>>>()?;
            rows.push(values);
        }
        let last = text.lines().count();
        flush(current.take(), &mut rows, last)?;
        if blocks.is_empty() {
            return Err(Error::Parse { line: 1, msg: "no heatmap blocks".into() });
        }
        let b = blocks.iter().map(|x| x.0).max().unwrap() + 1;
        let n = blocks.iter().map(|x| x.1).max().unwrap() + 1;
        let s = blocks[0].2.len();
        if blocks.len() != b * n || blocks.iter().any(|x| x.2.len() != s || x.3.len() != s) {
            return Err(Error::Parse { line: last, msg: "ragged or missing heatmap blocks".into() });
        }
        let mut t = Tensor::zeros(&[b, n, 2, s]);
        for (bi, ni, d1, d2) in blocks {
            for ti in 0..s {
                t.set(&[bi, ni, 0, ti], d1[ti]);
                t.set(&[bi, ni, 1, ti], d2[ti]);
            }
        }
        Heatmap2D::new(t)
    }

    /// Plain (P2) grayscale image of block `(batch, var)`: absolute
    /// values min-max scaled to 0..255, D2 on the top row and D1 below.
    /// A constant image renders as uniform mid gray.
    pub fn to_pgm(&self, batch: usize, var: usize) -> String {
        let (_, _, s) = self.dims();
        let rows = [self.row(batch, var, 1), self.row(batch, var, 0)];
        let mags: Vec<f64> = rows.iter().flat_map(|r| r.iter().map(|v| v.abs())).collect();
        let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = format!("P2\n{s} 2\n255\n");
        for r in 0..2 {
            let line: Vec<String> = mags[r * s..(r + 1) * s]
                .iter()
                .map(|&m| {
                    let g = if hi > lo { ((m - lo) / (hi - lo) * 255.0).round() } else { 128.0 };
                    format!("{}", g as u8)
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Writes the heatmap. CSV goes to `path`; PGM writes one image per
/// (batch, variable): `path` itself when there is a single block, otherwise
/// `<stem>_b<batch>_n<var>.pgm` next to it. Returns the files written.
pub fn export_heatmap(h: &Heatmap2D, path: &Path, format: HeatmapFormat) -> Result<Vec<PathBuf>> {
    let write = |p: &Path, text: &str| std::fs::write(p, text).map_err(|e| Error::io(p, e));
    match format {
        HeatmapFormat::Csv => {
            write(path, &h.to_csv())?;
            Ok(vec![path.to_path_buf()])
        }
        HeatmapFormat::Pgm => {
            let (b, n, _) = h.dims();
            let mut written = Vec::new();
            for bi in 0..b {
                for ni in 0..n {
                    let p = if b * n == 1 {
                        path.to_path_buf()
                    } else {
                        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("heatmap");
                        path.with_file_name(format!("{stem}_b{bi}_n{ni}.pgm"))
                    };
                    write(&p, &h.to_pgm(bi, ni))?;
                    written.push(p);
                }
            }
            Ok(written)
        }
    }
}

pub fn init_params(cfg: &ModelConfig, store: &mut ParamStore) {
    let (seed, ch) = (cfg.seed, cfg.c_h);
    store.insert("fsdh.conv1.weight", init_uniform("fsdh.conv1.weight", &[ch, 1, K, K], K * K, seed));
    store.insert(
        "fsdh.conv2.weight",
        init_uniform("fsdh.conv2.weight", &[ch, ch, K, K], ch * K * K, seed),
    );
    store.insert(
        "fsdh.collapse.weight",
        init_uniform("fsdh.collapse.weight", &[2 * ch, 1], 2 * ch, seed),
    );
    store.insert(
        "fsdh.head.weight",
        init_uniform("fsdh.head.weight", &[cfg.seq_len, cfg.pred_len], cfg.seq_len, seed),
    );
    store.insert("fsdh.head.bias", Tensor::zeros(&[cfg.pred_len]));
}

/// Features before the S→P head: `[B·N, S]`.
pub fn fsdh_features(tape: &mut Tape, binder: &mut Binder, x: Var, cfg: &ModelConfig) -> Result<Var> {
    let &[batch, s, vars] = tape.shape(x) else {
        return Err(Error::Shape(format!("FSDH expects [B,S,N], got {:?}", tape.shape(x))));
    };
    if s < 3 {
        return Err(Error::InputTooShort(format!("FSDH needs S >= 3, got {s}")));
    }
    let d1 = first_difference(tape, x)?;
    let d2 = second_difference(tape, d1)?;
    let heat = build_heatmap(tape, d1, d2)?;
    let heat = tape.reshape(heat, &[batch * vars, 1, 2, s])?;
    let k1 = binder.var(tape, "fsdh.conv1.weight")?;
    let h = tape.conv2d(heat, k1, Padding::Same)?;
    let h = tape.gelu(h)?;
    let k2 = binder.var(tape, "fsdh.conv2.weight")?;
    let h = tape.conv2d(h, k2, Padding::Same)?;
    // weighted sum over (channel, derivative) at every time step
    let h = tape.permute(h, &[0, 3, 1, 2])?;
    let h = tape.reshape(h, &[batch * vars * s, 2 * cfg.c_h])?;
    let w = binder.var(tape, "fsdh.collapse.weight")?;
    let h = tape.matmul(h, w)?;
    tape.reshape(h, &[batch * vars, s])
}

/// `[B,S,N] → [B,P,N]`.
pub fn fsdh_forward(tape: &mut Tape, binder: &mut Binder, x: Var, cfg: &ModelConfig) -> Result<Var> {
    let &[batch, _, vars] = tape.shape(x) else {
        return Err(Error::Shape(format!("FSDH expects [B,S,N], got {:?}", tape.shape(x))));
    };
    let feats = fsdh_features(tape, binder, x, cfg)?;
    let w = binder.var(tape, "fsdh.head.weight")?;
    let b = binder.var(tape, "fsdh.head.bias")?;
    let out = tape.matmul(feats, w)?;
    let out = add_row_bias(tape, out, b)?;
    let out = tape.reshape(out, &[batch, vars, cfg.pred_len])?;
    tape.permute(out, &[0, 2, 1])
}
