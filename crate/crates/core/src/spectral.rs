//! Frequency-domain period detection and 1D↔2D folding.
//!
//! The FFT is an iterative radix-2 transform; other lengths go through
//! Bluestein's chirp-z identity on top of a power-of-two transform, so any
//! window length (96, 336, ...) is supported exactly.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// In-place forward DFT, `X_f = Σ_t x_t e^{-2πi t f / n}`, for any length.
pub fn fft(buf: &mut [Complex64]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, false);
    } else {
        bluestein(buf);
    }
}

fn radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<Complex64> = (0..half)
            .map(|j| Complex64::from_polar(1.0, sign * 2.0 * PI * j as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let u = buf[start + j];
                let v = buf[start + j + half] * twiddles[j];
                buf[start + j] = u + v;
                buf[start + j + half] = u - v;
            }
        }
        len <<= 1;
    }
}

fn bluestein(buf: &mut [Complex64]) {
    let n = buf.len();
    let m = (2 * n - 1).next_power_of_two();
    // chirp w_k = exp(-iπk²/n); k² is reduced mod 2n to keep the angle small
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, -PI * k2 / n as f64)
        })
        .collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = buf[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, false);
    radix2(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    radix2(&mut a, true);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        buf[k] = a[k] * scale * chirp[k];
    }
}

/// Batch- and variable-averaged DFT magnitudes over non-negative frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    magnitudes: Vec<f64>,
    seq_len: usize,
}

impl Spectrum {
    pub fn from_magnitudes(magnitudes: Vec<f64>, seq_len: usize) -> Result<Self> {
        if magnitudes.len() != seq_len / 2 + 1 {
            return Err(Error::Shape(format!(
                "spectrum of a length-{seq_len} signal needs {} bins, got {}",
                seq_len / 2 + 1,
                magnitudes.len()
            )));
        }
        if magnitudes.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::Parameter("spectrum magnitudes must be non-negative".into()));
        }
        Ok(Spectrum { magnitudes, seq_len })
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }
}

/// Magnitude spectrum of `x: [B,S,N]`. Magnitudes are taken per series and
/// then averaged over the batch and variable axes.
pub fn rfft_magnitude(x: &Tensor) -> Result<Spectrum> {
    let &[batch, seq_len, vars] = x.shape() else {
        return Err(Error::Shape(format!(
            "rfft_magnitude expects [B,S,N], got {:?}",
            x.shape()
        )));
    };
    if seq_len < 4 {
        return Err(Error::InputTooShort(format!(
            "spectral analysis needs S >= 4, got S = {seq_len}"
        )));
    }
    let bins = seq_len / 2 + 1;
    let mut mags = vec![0.0; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); seq_len];
    let data = x.data();
    for b in 0..batch {
        for n in 0..vars {
            for (t, slot) in buf.iter_mut().enumerate() {
                *slot = Complex64::new(data[(b * seq_len + t) * vars + n], 0.0);
            }
            fft(&mut buf);
            for (m, c) in mags.iter_mut().zip(&buf) {
                *m += c.norm();
            }
        }
    }
    let count = (batch * vars) as f64;
    for m in &mut mags {
        *m /= count;
    }
    Ok(Spectrum {
        magnitudes: mags,
        seq_len,
    })
}

/// One selected dominant frequency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodEntry {
    /// Frequency bin index, always ≥ 1.
    pub freq: usize,
    /// `ceil(S / freq)`; also the row count of the folded grid.
    pub period: usize,
    pub amplitude: f64,
}

impl fmt::Display for PeriodEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "f={} period={} amplitude={}",
            self.freq,
            self.period,
            crate::config::fmt_num(self.amplitude)
        )
    }
}

/// The k dominant (frequency, period, amplitude) triples, by descending amplitude.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodSet {
    entries: Vec<PeriodEntry>,
    seq_len: usize,
}

impl PeriodSet {
    pub fn entries(&self) -> &[PeriodEntry] {
        &self.entries
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Compact `freq:period:amplitude` list, used in checkpoints.
    pub fn encode(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}:{}:{:e}", e.freq, e.period, e.amplitude))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn decode(text: &str, seq_len: usize) -> Result<Self> {
        let bad = || Error::Config(format!("malformed period list `{text}`"));
        let mut entries = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let parts: Vec<&str> = item.split(':').collect();
            let [f, p, a] = parts.as_slice() else { return Err(bad()) };
            let freq: usize = f.parse().map_err(|_| bad())?;
            let period: usize = p.parse().map_err(|_| bad())?;
            let amplitude: f64 = a.parse().map_err(|_| bad())?;
            if freq == 0 || period != seq_len.div_ceil(freq) {
                return Err(bad());
            }
            entries.push(PeriodEntry { freq, period, amplitude });
        }
        if entries.is_empty() {
            return Err(bad());
        }
        Ok(PeriodSet { entries, seq_len })
    }
}

/// Picks the `k` largest non-DC bins. Ties go to the lower frequency index.
pub fn top_k_periods(spec: &Spectrum, k: usize) -> Result<PeriodSet> {
    let s = spec.seq_len;
    if k < 1 || k > s / 2 {
        return Err(Error::Parameter(format!(
            "k must be in 1..={} for S = {s}, got {k}",
            s / 2
        )));
    }
    let mut bins: Vec<usize> = (1..spec.magnitudes.len()).collect();
    bins.sort_by(|&a, &b| {
        spec.magnitudes[b]
            .total_cmp(&spec.magnitudes[a])
            .then(a.cmp(&b))
    });
    let entries = bins[..k]
        .iter()
        .map(|&f| PeriodEntry {
            freq: f,
            period: s.div_ceil(f),
            amplitude: spec.magnitudes[f],
        })
        .collect();
    Ok(PeriodSet { entries, seq_len: s })
}

fn check_fold(seq_len: usize, p: usize, f: usize) -> Result<()> {
    if p == 0 || f == 0 || p * f < seq_len {
        return Err(Error::Fold(format!(
            "a {p}x{f} grid cannot hold {seq_len} time steps"
        )));
    }
    Ok(())
}

/// `[B,S,N] → [B,N,p,f]`: zero-pads the tail to `p·f` and lays successive
/// length-`p` segments out as columns.
pub fn fold_to_2d(x: &Tensor, p: usize, f: usize) -> Result<Tensor> {
    let &[batch, seq_len, vars] = x.shape() else {
        return Err(Error::Shape(format!("fold expects [B,S,N], got {:?}", x.shape())));
    };
    check_fold(seq_len, p, f)?;
    Ok(Tensor::from_fn(&[batch, vars, p, f], |i| {
        let t = i[3] * p + i[2];
        if t < seq_len {
            x.get(&[i[0], t, i[1]])
        } else {
            0.0
        }
    }))
}

/// Inverse of [`fold_to_2d`]; drops the padded tail.
pub fn unfold_to_1d(t: &Tensor, seq_len: usize) -> Result<Tensor> {
    let &[batch, vars, p, f] = t.shape() else {
        return Err(Error::Shape(format!("unfold expects [B,N,p,f], got {:?}", t.shape())));
    };
    if seq_len == 0 || seq_len > p * f {
        return Err(Error::Parameter(format!(
            "cannot unfold a {p}x{f} grid to length {seq_len}"
        )));
    }
    Ok(Tensor::from_fn(&[batch, seq_len, vars], |i| {
        t.get(&[i[0], i[2], i[1] % p, i[1] / p])
    }))
}

/// Differentiable [`fold_to_2d`].
pub fn fold_on_tape(tape: &mut Tape, x: Var, p: usize, f: usize) -> Result<Var> {
    let &[batch, seq_len, vars] = tape.shape(x) else {
        return Err(Error::Shape(format!("fold expects [B,S,N], got {:?}", tape.shape(x))));
    };
    check_fold(seq_len, p, f)?;
    let mut v = tape.permute(x, &[0, 2, 1])?;
    if p * f > seq_len {
        v = tape.pad(v, 2, 0, p * f - seq_len)?;
    }
    let v = tape.reshape(v, &[batch, vars, f, p])?;
    tape.permute(v, &[0, 1, 3, 2])
}
