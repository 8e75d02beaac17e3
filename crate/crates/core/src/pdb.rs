//! Periodic decomposition block.
//!
//! Each dominant period folds the input window into a `p × f` grid, which goes
//! through a 3×3 convolution. Every column (one full period, all conv channels)
//! becomes a token; tokens get a learned embedding, a sinusoidal position,
//! `depth` rounds of self-attention and feed-forward with residuals and layer
//! norm, and finally a linear head to the prediction length. Branch outputs
//! are combined with softmax weights over their spectral amplitudes.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::{add_row_bias, init_linear, init_uniform, linear, Binder, ForwardCtx, ParamStore};
use crate::spectral::{fold_on_tape, PeriodEntry};
use crate::tensor::{Padding, Tape, Tensor, Var};

const NORM_EPS: f64 = 1e-5;
pub const CONV_KERNEL: usize = 3;

pub(crate) fn shape_prefix(period: usize, freq: usize) -> String {
    format!("pdb.p{period}_f{freq}")
}

/// Sinusoidal table: `pe[j,2m] = sin(j / 10000^(2m/d))`, `pe[j,2m+1] = cos(·)`.
pub fn positional_encoding(tokens: usize, d_model: usize) -> Tensor {
    Tensor::from_fn(&[tokens, d_model], |i| {
        let (j, c) = (i[0] as f64, i[1]);
        let angle = j / 10000f64.powf((c - c % 2) as f64 / d_model as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Creates the shape-independent PDB parameters.
pub fn init_shared(cfg: &ModelConfig, store: &mut ParamStore) {
    let seed = cfg.seed;
    let fan_in = cfg.n_vars * CONV_KERNEL * CONV_KERNEL;
    store.insert(
        "pdb.conv.weight",
        init_uniform(
            "pdb.conv.weight",
            &[cfg.c_mid, cfg.n_vars, CONV_KERNEL, CONV_KERNEL],
            fan_in,
            seed,
        ),
    );
    let d = cfg.d_model;
    for l in 0..cfg.depth {
        for proj in ["q", "k", "v", "o"] {
            init_linear(store, &format!("pdb.layer{l}.attn.{proj}"), d, d, seed);
        }
        init_linear(store, &format!("pdb.layer{l}.ffn.in"), d, cfg.d_ff, seed);
        init_linear(store, &format!("pdb.layer{l}.ffn.out"), cfg.d_ff, d, seed);
        for norm in ["norm1", "norm2"] {
            store.insert(format!("pdb.layer{l}.{norm}.gamma"), Tensor::ones(&[d]));
            store.insert(format!("pdb.layer{l}.{norm}.beta"), Tensor::zeros(&[d]));
        }
    }
}

/// Instantiates the token embedding and output head for a `period × freq`
/// grid if they do not exist yet. Returns whether anything was created.
pub fn ensure_shape(cfg: &ModelConfig, store: &mut ParamStore, period: usize, freq: usize) -> bool {
    let prefix = shape_prefix(period, freq);
    let embed = format!("{prefix}.embed");
    if store.contains(&format!("{embed}.weight")) {
        return false;
    }
    init_linear(store, &embed, cfg.c_mid * period, cfg.d_model, cfg.seed);
    init_linear(
        store,
        &format!("{prefix}.head"),
        freq * cfg.d_model,
        cfg.pred_len * cfg.n_vars,
        cfg.seed,
    );
    true
}

/// Scaled dot-product self-attention over `tokens: [B,f,d]` with `heads`
/// heads and no mask. Uses `{prefix}.{q,k,v,o}`.
pub fn mhsa(
    tape: &mut Tape,
    binder: &mut Binder,
    tokens: Var,
    heads: usize,
    prefix: &str,
) -> Result<Var> {
    let &[batch, f, d] = tape.shape(tokens) else {
        return Err(Error::Shape(format!("mhsa expects [B,f,d], got {:?}", tape.shape(tokens))));
    };
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("d_model {d} is not divisible by {heads} heads")));
    }
    let hd = d / heads;
    let flat = tape.reshape(tokens, &[batch * f, d])?;
    let mut split = |tape: &mut Tape, name: &str| -> Result<Var> {
        let y = linear(tape, binder, flat, &format!("{prefix}.{name}"))?;
        let y = tape.reshape(y, &[batch, f, heads, hd])?;
        let y = tape.permute(y, &[0, 2, 1, 3])?;
        tape.reshape(y, &[batch * heads, f, hd])
    };
    let q = split(tape, "q")?;
    let k = split(tape, "k")?;
    let v = split(tape, "v")?;
    let kt = tape.permute(k, &[0, 2, 1])?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt())?;
    let attn = tape.softmax(scores, 2)?;
    let ctx = tape.matmul(attn, v)?;
    let ctx = tape.reshape(ctx, &[batch, heads, f, hd])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[batch * f, d])?;
    let out = linear(tape, binder, ctx, &format!("{prefix}.o"))?;
    tape.reshape(out, &[batch, f, d])
}

/// Position-wise `linear → GELU → linear` using `{prefix}.in` / `{prefix}.out`.
pub fn ffn(tape: &mut Tape, binder: &mut Binder, tokens: Var, prefix: &str) -> Result<Var> {
    let shape = tape.shape(tokens).to_vec();
    let d = *shape.last().ok_or_else(|| Error::Shape("ffn on a scalar".into()))?;
    let rows = shape[..shape.len() - 1].iter().product();
    let flat = tape.reshape(tokens, &[rows, d])?;
    let h = linear(tape, binder, flat, &format!("{prefix}.in"))?;
    let h = tape.gelu(h)?;
    let out = linear(tape, binder, h, &format!("{prefix}.out"))?;
    tape.reshape(out, &shape)
}

/// Prediction of a single period branch.
#[derive(Clone, Copy, Debug)]
pub struct BranchOutput {
    /// `[B,P,N]`
    pub prediction: Var,
    pub amplitude: f64,
}

/// One PDB branch: fold, conv, tokenize, attend, project. `x: [B,S,N]`.
pub fn pdb_branch_forward(
    tape: &mut Tape,
    binder: &mut Binder,
    x: Var,
    entry: &PeriodEntry,
    cfg: &ModelConfig,
    ctx: &mut ForwardCtx,
) -> Result<BranchOutput> {
    let &[batch, _, vars] = tape.shape(x) else {
        return Err(Error::Shape(format!("PDB expects [B,S,N], got {:?}", tape.shape(x))));
    };
    let (p, f) = (entry.period, entry.freq);
    let (d, c) = (cfg.d_model, cfg.c_mid);
    let prefix = shape_prefix(p, f);

    let grid = fold_on_tape(tape, x, p, f)?;
    let kernel = binder.var(tape, "pdb.conv.weight")?;
    let feat = tape.conv2d(grid, kernel, Padding::Same)?;
    // [B,C,p,f] -> [B,f,C,p]: each column becomes a C·p token
    let cols = tape.permute(feat, &[0, 3, 1, 2])?;
    let cols = tape.reshape(cols, &[batch * f, c * p])?;
    let emb = linear(tape, binder, cols, &format!("{prefix}.embed"))?;

    let pe = positional_encoding(f, d);
    let mut tiled = Vec::with_capacity(batch * f * d);
    for _ in 0..batch {
        tiled.extend_from_slice(pe.data());
    }
    let pe = tape.constant(Tensor::new(vec![batch * f, d], tiled)?);
    let emb = tape.add(emb, pe)?;
    let mut h = tape.reshape(emb, &[batch, f, d])?;

    for l in 0..cfg.depth {
        let lp = format!("pdb.layer{l}");
        let a = mhsa(tape, binder, h, cfg.heads, &format!("{lp}.attn"))?;
        let a = ctx.dropout(tape, a)?;
        let r = tape.add(h, a)?;
        h = norm(tape, binder, r, &format!("{lp}.norm1"))?;
        let m = ffn(tape, binder, h, &format!("{lp}.ffn"))?;
        let m = ctx.dropout(tape, m)?;
        let r = tape.add(h, m)?;
        h = norm(tape, binder, r, &format!("{lp}.norm2"))?;
    }

    let flat = tape.reshape(h, &[batch, f * d])?;
    let w = binder.var(tape, &format!("{prefix}.head.weight"))?;
    let b = binder.var(tape, &format!("{prefix}.head.bias"))?;
    let out = tape.matmul(flat, w)?;
    let out = add_row_bias(tape, out, b)?;
    let prediction = tape.reshape(out, &[batch, cfg.pred_len, vars])?;
    Ok(BranchOutput {
        prediction,
        amplitude: entry.amplitude,
    })
}

fn norm(tape: &mut Tape, binder: &mut Binder, x: Var, prefix: &str) -> Result<Var> {
    let g = binder.var(tape, &format!("{prefix}.gamma"))?;
    let b = binder.var(tape, &format!("{prefix}.beta"))?;
    tape.layer_norm(x, g, b, NORM_EPS)
}

/// Softmax of branch amplitudes.
pub fn merge_weights(amplitudes: &[f64]) -> Vec<f64> {
    let max = amplitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = amplitudes.iter().map(|a| (a - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `Σ wᵢ · predictionᵢ` with `w = softmax(amplitudes)`.
pub fn branch_merge(tape: &mut Tape, branches: &[BranchOutput]) -> Result<Var> {
    if branches.is_empty() {
        return Err(Error::Contract("branch_merge needs at least one branch".into()));
    }
    let amps: Vec<f64> = branches.iter().map(|b| b.amplitude).collect();
    let weights = merge_weights(&amps);
    let mut acc: Option<Var> = None;
    for (b, w) in branches.iter().zip(weights) {
        let term = tape.scale(b.prediction, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.expect("non-empty"))
}
