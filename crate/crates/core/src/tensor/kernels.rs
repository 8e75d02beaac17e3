//! Forward and backward kernels on raw row-major buffers.

use crate::error::{Error, Result};

/// Spatial padding mode for [`super::Tape::conv2d`]. Stride is always 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so the output has the input's spatial size.
    Same,
    /// No padding.
    Valid,
}

/// Per-axis (before, after) zero padding for a conv window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvPad {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl ConvPad {
    pub fn resolve(padding: Padding, kh: usize, kw: usize) -> Self {
        match padding {
            Padding::Valid => ConvPad { top: 0, bottom: 0, left: 0, right: 0 },
            Padding::Same => ConvPad {
                top: (kh - 1) / 2,
                bottom: kh - 1 - (kh - 1) / 2,
                left: (kw - 1) / 2,
                right: kw - 1 - (kw - 1) / 2,
            },
        }
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Splits `shape` around `axis` into (outer, extent, inner) block sizes.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn check_perm(shape: &[usize], perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() {
        return Err(Error::Shape(format!(
            "permutation {perm:?} does not match rank of shape {shape:?}"
        )));
    }
    for &p in perm {
        if p >= shape.len() || seen[p] {
            return Err(Error::Shape(format!(
                "invalid permutation {perm:?} for shape {shape:?}"
            )));
        }
        seen[p] = true;
    }
    Ok(())
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub(crate) fn permute(shape: &[usize], data: &[f64], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    if rank == 0 {
        out.extend_from_slice(data);
        return (out_shape, out);
    }
    let last = rank - 1;
    let (last_extent, last_stride) = (out_shape[last], src[last]);
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    while out.len() < n {
        if last_stride == 1 {
            out.extend_from_slice(&data[base..base + last_extent]);
        } else {
            out.extend((0..last_extent).map(|j| data[base + j * last_stride]));
        }
        for ax in (0..last).rev() {
            idx[ax] += 1;
            base += src[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

/// `out[m,n] = a[m,k] · b[k,n]`, accumulated into `out`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ`
pub(crate) fn gemm_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            out[i * k + p] += dot(g_row, b_row);
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
pub(crate) fn gemm_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize without reassociating
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Dimensions of a conv2d problem, all in elements.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad: ConvPad,
}

impl ConvDims {
    /// Output rows `y` for which input row `y + dy - top` is in range.
    fn rows(&self, dy: usize) -> std::ops::Range<usize> {
        let lo = self.pad.top.saturating_sub(dy);
        let hi = (self.h + self.pad.top).saturating_sub(dy).min(self.out_h);
        lo..hi.max(lo)
    }

    fn cols(&self, dx: usize) -> std::ops::Range<usize> {
        let lo = self.pad.left.saturating_sub(dx);
        let hi = (self.w + self.pad.left).saturating_sub(dx).min(self.out_w);
        lo..hi.max(lo)
    }
}

pub(crate) fn conv2d_forward(input: &[f64], kernel: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.c_out * d.out_h * d.out_w];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let o_base = (b * d.c_out + co) * d.out_h * d.out_w;
            for ci in 0..d.c_in {
                let i_base = (b * d.c_in + ci) * d.h * d.w;
                for dy in 0..d.kh {
                    for dx in 0..d.kw {
                        let wv = kernel[((co * d.c_in + ci) * d.kh + dy) * d.kw + dx];
                        if wv == 0.0 {
                            continue;
                        }
                        let cols = d.cols(dx);
                        for y in d.rows(dy) {
                            let iy = y + dy - d.pad.top;
                            let o_row = &mut out[o_base + y * d.out_w..][..d.out_w];
                            let i_row = &input[i_base + iy * d.w..][..d.w];
                            for x in cols.clone() {
                                o_row[x] += wv * i_row[x + dx - d.pad.left];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (d_input, d_kernel) for upstream gradient `g`.
pub(crate) fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    g: &[f64],
    d: &ConvDims,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut d_in = want_input.then(|| vec![0.0; input.len()]);
    let mut d_k = want_kernel.then(|| vec![0.0; kernel.len()]);
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let g_base = (b * d.c_out + co) * d.out_h * d.out_w;
            for ci in 0..d.c_in {
                let i_base = (b * d.c_in + ci) * d.h * d.w;
                for dy in 0..d.kh {
                    for dx in 0..d.kw {
                        let k_idx = ((co * d.c_in + ci) * d.kh + dy) * d.kw + dx;
                        let wv = kernel[k_idx];
                        let cols = d.cols(dx);
                        let mut acc = 0.0;
                        for y in d.rows(dy) {
                            let iy = y + dy - d.pad.top;
                            let g_row = &g[g_base + y * d.out_w..][..d.out_w];
                            let i_off = i_base + iy * d.w;
                            if let Some(di) = d_in.as_mut() {
                                let di_row = &mut di[i_off..i_off + d.w];
                                for x in cols.clone() {
                                    di_row[x + dx - d.pad.left] += wv * g_row[x];
                                }
                            }
                            if d_k.is_some() {
                                let i_row = &input[i_off..i_off + d.w];
                                for x in cols.clone() {
                                    acc += g_row[x] * i_row[x + dx - d.pad.left];
                                }
                            }
                        }
                        if let Some(dk) = d_k.as_mut() {
                            dk[k_idx] += acc;
                        }
                    }
                }
            }
        }
    }
    (d_in, d_k)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn softmax_forward(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split_at_axis(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let max = (0..len).map(|j| data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..len {
                let e = (data[at(j)] - max).exp();
                out[at(j)] = e;
                sum += e;
            }
            for j in 0..len {
                out[at(j)] /= sum;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(y: &[f64], g: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = split_at_axis(shape, axis);
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let s: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (g[at(j)] - s);
            }
        }
    }
    dx
}

/// Normalizes rows of length `n`; returns (output, xhat, rstd per row).
pub(crate) fn layer_norm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    n: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / n;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * n..(r + 1) * n];
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..n {
            let h = (row[j] - mean) * rs;
            xhat[r * n + j] = h;
            out[r * n + j] = h * gamma[j] + beta[j];
        }
    }
    (out, xhat, rstd)
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn layer_norm_backward(
    g: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gamma: &[f64],
    n: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = g.len() / n;
    let mut dx = vec![0.0; g.len()];
    let mut dgamma = vec![0.0; n];
    let mut dbeta = vec![0.0; n];
    let mut dxhat = vec![0.0; n];
    for r in 0..rows {
        let gr = &g[r * n..(r + 1) * n];
        let hr = &xhat[r * n..(r + 1) * n];
        for j in 0..n {
            dgamma[j] += gr[j] * hr[j];
            dbeta[j] += gr[j];
            dxhat[j] = gr[j] * gamma[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
        let mean_dh = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        for j in 0..n {
            dx[r * n + j] = rstd[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn pad_axis(
    data: &[f64],
    shape: &[usize],
    axis: usize,
    before: usize,
    after: usize,
) -> Vec<f64> {
    let (outer, len, inner) = split_at_axis(shape, axis);
    let new_len = len + before + after;
    let mut out = vec![0.0; outer * new_len * inner];
    for o in 0..outer {
        let src = &data[o * len * inner..(o + 1) * len * inner];
        let dst = &mut out[(o * new_len + before) * inner..][..len * inner];
        dst.copy_from_slice(src);
    }
    out
}

pub(crate) fn slice_axis(
    data: &[f64],
    shape: &[usize],
    axis: usize,
    start: usize,
    end: usize,
) -> Vec<f64> {
    let (outer, len, inner) = split_at_axis(shape, axis);
    let width = end - start;
    let mut out = Vec::with_capacity(outer * width * inner);
    for o in 0..outer {
        out.extend_from_slice(&data[(o * len + start) * inner..(o * len + end) * inner]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_splits_even_kernels() {
        let p = ConvPad::resolve(Padding::Same, 3, 4);
        assert_eq!((p.top, p.bottom, p.left, p.right), (1, 1, 1, 2));
    }

    #[test]
    fn gelu_matches_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_607_477_9).abs() < 1e-12);
        let h = 1e-6;
        for &x in &[-2.0, -0.3, 0.0, 0.7, 3.1] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn pad_then_slice_is_identity() {
        let shape = [2, 3, 2];
        let data: Vec<f64> = (0..12).map(f64::from).collect();
        let padded = pad_axis(&data, &shape, 1, 2, 1);
        assert_eq!(padded.len(), 2 * 6 * 2);
        assert_eq!(slice_axis(&padded, &[2, 6, 2], 1, 2, 5), data);
    }
}
