use super::kernels::{self, ConvDims, ConvPad, Padding};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    MatMul(Var, Var),
    Conv2d { input: Var, kernel: Var, dims: ConvDims },
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Pad { x: Var, axis: usize, before: usize },
    Slice { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Stack { xs: Vec<Var>, axis: usize },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Abs(..) => "abs",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Gelu(..) => "gelu",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Reshape(..) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Pad { .. } => "pad",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Stack { .. } => "stack",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Abs(a)
            | Op::Gelu(a)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::Softmax { x, .. }
            | Op::Permute { x, .. }
            | Op::Pad { x, .. }
            | Op::Slice { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat { xs, .. } | Op::Stack { xs, .. } => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradient values for the leaves of a tape after [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// dLoss/dLeaf, or `None` if the leaf does not require grad or does not
    /// reach the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Ordered record of forward ops. Every op's inputs precede it, so a single
/// reverse sweep visits each node once in valid order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, true, Op::Leaf)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        let inputs = op.inputs();
        if cfg!(debug_assertions)
            && !data.iter().all(|v| v.is_finite())
            && inputs.iter().all(|&i| self.nodes[i.0].value.is_finite())
        {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push_raw(value, requires_grad, op))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{op}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape().to_vec();
        self.push(shape, data, op)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let shape = va.shape().to_vec();
        self.push(shape, data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Multiplies every element by a scalar constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    /// Adds a scalar constant to every element.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Abs(a), f64::abs)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Gelu(a), kernels::gelu)
    }

    /// Matrix product of `[m,k]·[k,n]`, or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b, m, k], [b2, k2, n]) if b == b2 && k == k2 => (*b, *m, *k, *n),
            _ => {
                return Err(Error::Shape(format!(
                    "matmul: cannot multiply {sa:?} by {sb:?}"
                )))
            }
        };
        let mut out = vec![0.0; batch * m * n];
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        for i in 0..batch {
            kernels::gemm_acc(
                &va[i * m * k..(i + 1) * m * k],
                &vb[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        self.push(shape, out, Op::MatMul(a, b))
    }

    /// Stride-1 cross-correlation of `[B,C_in,H,W]` with `[C_out,C_in,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, padding: Padding) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        let ([batch, c_in, h, w], [c_out, c_in2, kh, kw]) = (si.as_slice(), sk.as_slice()) else {
            return Err(Error::Shape(format!(
                "conv2d: expected rank-4 input and kernel, got {si:?} and {sk:?}"
            )));
        };
        if c_in != c_in2 {
            return Err(Error::Shape(format!(
                "conv2d: input channels of {si:?} do not match kernel {sk:?}"
            )));
        }
        let pad = ConvPad::resolve(padding, *kh, *kw);
        let (ph, pw) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
        if *kh > ph || *kw > pw {
            return Err(Error::Shape(format!(
                "conv2d: kernel {sk:?} larger than padded input {si:?}"
            )));
        }
        let dims = ConvDims {
            batch: *batch,
            c_in: *c_in,
            c_out: *c_out,
            h: *h,
            w: *w,
            kh: *kh,
            kw: *kw,
            out_h: ph - kh + 1,
            out_w: pw - kw + 1,
            pad,
        };
        let out = kernels::conv2d_forward(self.value(input).data(), self.value(kernel).data(), &dims);
        let shape = vec![dims.batch, dims.c_out, dims.out_h, dims.out_w];
        self.push(shape, out, Op::Conv2d { input, kernel, dims })
    }

    fn check_axis(&self, op: &str, x: Var, axis: usize) -> Result<()> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(Error::Shape(format!("{op}: axis {axis} out of range for shape {s:?}")));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let v = self.value(x);
        let out = kernels::softmax_forward(v.data(), v.shape(), axis);
        let shape = v.shape().to_vec();
        self.push(shape, out, Op::Softmax { x, axis })
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta` of that extent.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let sx = self.shape(x).to_vec();
        let n = *sx
            .last()
            .ok_or_else(|| Error::Shape("layer_norm: scalar input".into()))?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(Error::Shape(format!(
                "layer_norm: gamma {:?} / beta {:?} must be [{n}] for input {sx:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (out, xhat, rstd) = kernels::layer_norm_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            n,
            eps,
        );
        self.push(sx, out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let n: usize = shape.iter().product();
        if n != v.len() {
            return Err(Error::Shape(format!(
                "reshape: cannot view {:?} as {shape:?}",
                v.shape()
            )));
        }
        let data = v.data().to_vec();
        self.push(shape.to_vec(), data, Op::Reshape(x))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(x);
        kernels::check_perm(v.shape(), perm)?;
        let (shape, data) = kernels::permute(v.shape(), v.data(), perm);
        self.push(shape, data, Op::Permute { x, perm: perm.to_vec() })
    }

    /// Zero-pads `before`/`after` elements along `axis`.
    pub fn pad(&mut self, x: Var, axis: usize, before: usize, after: usize) -> Result<Var> {
        self.check_axis("pad", x, axis)?;
        let v = self.value(x);
        let data = kernels::pad_axis(v.data(), v.shape(), axis, before, after);
        let mut shape = v.shape().to_vec();
        shape[axis] += before + after;
        self.push(shape, data, Op::Pad { x, axis, before })
    }

    /// Keeps indices `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let v = self.value(x);
        if start >= end || end > v.shape()[axis] {
            return Err(Error::Shape(format!(
                "slice: range {start}..{end} invalid on axis {axis} of {:?}",
                v.shape()
            )));
        }
        let data = kernels::slice_axis(v.data(), v.shape(), axis, start, end);
        let mut shape = v.shape().to_vec();
        shape[axis] = end - start;
        self.push(shape, data, Op::Slice { x, axis, start })
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        self.check_axis("concat", first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape(format!(
                    "concat: {s:?} incompatible with {base:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_at_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let w = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(shape, data, Op::Concat { xs: xs.to_vec(), axis })
    }

    /// Stacks equally shaped tensors along a new axis inserted at `axis`.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis > base.len() {
            return Err(Error::Shape(format!("stack: axis {axis} out of range for {base:?}")));
        }
        for &x in xs {
            if self.shape(x) != base.as_slice() {
                return Err(Error::Shape(format!(
                    "stack: shapes {base:?} and {:?} differ",
                    self.shape(x)
                )));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis..].iter().product();
        let mut data = Vec::with_capacity(outer * inner * xs.len());
        for o in 0..outer {
            for &x in xs {
                data.extend_from_slice(&self.value(x).data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = base;
        shape.insert(axis, xs.len());
        self.push(shape, data, Op::Stack { xs: xs.to_vec(), axis })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(vec![], vec![s], Op::Sum(x))
    }

    /// Mean of all elements as a rank-0 tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.sum() / v.len() as f64;
        self.push(vec![], vec![m], Op::Mean(x))
    }

    /// Reverse sweep from a scalar `loss`. Gradients from multiple consumers
    /// of the same value are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaves: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |v: Var, contrib: Vec<f64>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => {
                        for (e, c) in existing.iter_mut().zip(&contrib) {
                            *e += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {
                    leaves[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.iter().map(|v| -v).collect());
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    acc(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                    acc(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
                }
                Op::Div(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    acc(*a, g.iter().zip(vb).map(|(g, y)| g / y).collect());
                    acc(
                        *b,
                        g.iter()
                            .zip(va.iter().zip(vb))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect(),
                    );
                }
                Op::Scale(a, c) => acc(*a, g.iter().map(|v| v * c).collect()),
                Op::AddScalar(a) => acc(*a, g),
                Op::Abs(a) => {
                    let va = self.value(*a).data();
                    acc(
                        *a,
                        g.iter()
                            .zip(va)
                            .map(|(g, x)| if *x > 0.0 { *g } else if *x < 0.0 { -g } else { 0.0 })
                            .collect(),
                    );
                }
                Op::Gelu(a) => {
                    let va = self.value(*a).data();
                    acc(*a, g.iter().zip(va).map(|(g, &x)| g * kernels::gelu_grad(x)).collect());
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let sa = ta.shape();
                    let (batch, m, k) = match sa {
                        [m, k] => (1, *m, *k),
                        [b, m, k] => (*b, *m, *k),
                        _ => unreachable!(),
                    };
                    let n = *tb.shape().last().unwrap();
                    if self.requires_grad(*a) {
                        let mut da = vec![0.0; ta.len()];
                        for i in 0..batch {
                            kernels::gemm_nt_acc(
                                &g[i * m * n..(i + 1) * m * n],
                                &tb.data()[i * k * n..(i + 1) * k * n],
                                &mut da[i * m * k..(i + 1) * m * k],
                                m,
                                k,
                                n,
                            );
                        }
                        acc(*a, da);
                    }
                    if self.requires_grad(*b) {
                        let mut db = vec![0.0; tb.len()];
                        for i in 0..batch {
                            kernels::gemm_tn_acc(
                                &ta.data()[i * m * k..(i + 1) * m * k],
                                &g[i * m * n..(i + 1) * m * n],
                                &mut db[i * k * n..(i + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                        acc(*b, db);
                    }
                }
                Op::Conv2d { input, kernel, dims } => {
                    let (di, dk) = kernels::conv2d_backward(
                        self.value(*input).data(),
                        self.value(*kernel).data(),
                        &g,
                        dims,
                        self.requires_grad(*input),
                        self.requires_grad(*kernel),
                    );
                    if let Some(di) = di {
                        acc(*input, di);
                    }
                    if let Some(dk) = dk {
                        acc(*kernel, dk);
                    }
                }
                Op::Softmax { x, axis } => {
                    let dx = kernels::softmax_backward(node.value.data(), &g, node.value.shape(), *axis);
                    acc(*x, dx);
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let n = *node.value.shape().last().unwrap();
                    let (dx, dg, db) =
                        kernels::layer_norm_backward(&g, xhat, rstd, self.value(*gamma).data(), n);
                    acc(*x, dx);
                    acc(*gamma, dg);
                    acc(*beta, db);
                }
                Op::Reshape(x) => acc(*x, g),
                Op::Permute { x, perm } => {
                    let inv = kernels::inverse_perm(perm);
                    let (_, dx) = kernels::permute(node.value.shape(), &g, &inv);
                    acc(*x, dx);
                }
                Op::Pad { x, axis, before } => {
                    let len = self.shape(*x)[*axis];
                    acc(
                        *x,
                        kernels::slice_axis(&g, node.value.shape(), *axis, *before, before + len),
                    );
                }
                Op::Slice { x, axis, start } => {
                    let full = self.shape(*x)[*axis];
                    let width = node.value.shape()[*axis];
                    acc(
                        *x,
                        kernels::pad_axis(&g, node.value.shape(), *axis, *start, full - start - width),
                    );
                }
                Op::Concat { xs, axis } => {
                    let (outer, total, inner) = kernels::split_at_axis(node.value.shape(), *axis);
                    let mut offset = 0;
                    for &x in xs {
                        let w = self.shape(x)[*axis];
                        let mut part = Vec::with_capacity(outer * w * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            part.extend_from_slice(&g[start..start + w * inner]);
                        }
                        offset += w;
                        acc(x, part);
                    }
                }
                Op::Stack { xs, axis } => {
                    let base = self.shape(xs[0]);
                    let outer: usize = base[..*axis].iter().product();
                    let inner: usize = base[*axis..].iter().product();
                    for (j, &x) in xs.iter().enumerate() {
                        let mut part = Vec::with_capacity(outer * inner);
                        for o in 0..outer {
                            let start = (o * xs.len() + j) * inner;
                            part.extend_from_slice(&g[start..start + inner]);
                        }
                        acc(x, part);
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    acc(*x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    acc(*x, vec![g[0] / n as f64; n]);
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut tape = Tape::new();
        let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("by [2, 3]"), "{msg}");
    }

    #[test]
    fn no_implicit_broadcasting() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn conv2d_identity_and_valid_sum() {
        let mut tape = Tape::new();
        let x = Tensor::from_fn(&[1, 1, 4, 5], |i| (i[2] * 5 + i[3]) as f64);
        let xv = tape.constant(x.clone());
        let k = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = tape.conv2d(xv, k, Padding::Same).unwrap();
        assert_eq!(tape.value(y), &x);

        let ones = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k3 = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let y = tape.conv2d(ones, k3, Padding::Valid).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).item(), 9.0);
    }

    #[test]
    fn conv2d_rejects_oversized_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let k = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(tape.conv2d(x, k, Padding::Valid).is_err());
        assert!(tape.conv2d(x, k, Padding::Same).is_ok());
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[3]));
        let s = tape.softmax(z, 0).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = tape.constant(t(&[2], &[1000.0, 1000.0]));
        let s = tape.softmax(big, 0).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_hand_cases() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::ones(&[3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        let c = tape.constant(Tensor::full(&[1, 3], 7.5));
        let y = tape.layer_norm(c, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(t(&[2], &[1.0, 3.0]));
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] + 1.0).abs() < 1e-9 && (out[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let c = tape.constant(t(&[2], &[3.0, 4.0]));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn overflow_is_reported_in_debug_builds() {
        if !cfg!(debug_assertions) {
            return;
        }
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1], &[1e300]));
        assert!(matches!(tape.scale(x, 1e300), Err(Error::NonFinite { op: "scale" })));
    }
}
