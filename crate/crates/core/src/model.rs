//! Full Times2D model: periodic decomposition branches plus derivative
//! heatmaps, summed elementwise.

use std::str::FromStr;

use crate::config::{fmt_num, parse_bool, parse_value};
use crate::error::{Error, Result};
use crate::params::{Binder, ForwardCtx, ParamStore};
use crate::spectral::{rfft_magnitude, top_k_periods, PeriodSet};
use crate::tensor::{Tape, Tensor, Var};
use crate::{fsdh, pdb};

/// Storage precision for parameters and optimizer state. Arithmetic is
/// always carried out in `f64`; `F32` rounds stored values to the nearest
/// `f32` after initialization and after every optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::F32 => v as f32 as f64,
            Precision::F64 => v,
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" | "f32" => Ok(Precision::F32),
            "64" | "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be 32 or 64, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Input window length S.
    pub seq_len: usize,
    /// Prediction length P.
    pub pred_len: usize,
    /// Number of variables N.
    pub n_vars: usize,
    /// Number of dominant periods.
    pub k: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    /// Conv channels in the periodic branches.
    pub c_mid: usize,
    /// Conv channels in the heatmap branch.
    pub c_h: usize,
    /// Attention + FFN rounds per branch.
    pub depth: usize,
    pub dropout: f64,
    pub precision: Precision,
    pub seed: u64,
    /// Estimate periods once on training data instead of per input window.
    pub frozen_periods: bool,
    /// Per-window standardization of the input, undone on the output.
    pub instance_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            seq_len: 96,
            pred_len: 96,
            n_vars: 1,
            k: 3,
            d_model: 64,
            d_ff: 128,
            heads: 4,
            c_mid: 16,
            c_h: 8,
            depth: 1,
            dropout: 0.1,
            precision: Precision::F32,
            seed: 2024,
            frozen_periods: false,
            instance_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.seq_len < 4 {
            return fail(format!("seq_len must be >= 4, got {}", self.seq_len));
        }
        if self.pred_len < 1 || self.n_vars < 1 {
            return fail("pred_len and n_vars must be >= 1".into());
        }
        if self.k < 1 || self.k > self.seq_len / 2 {
            return fail(format!("k must be in 1..={}, got {}", self.seq_len / 2, self.k));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if [self.d_model, self.d_ff, self.c_mid, self.c_h, self.depth].contains(&0) {
            return fail("d_model, d_ff, c_mid, c_h and depth must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Applies `key = value`; returns `false` when the key is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "seq_len" => self.seq_len = parse_value(key, value)?,
            "pred_len" => self.pred_len = parse_value(key, value)?,
            "n_vars" => self.n_vars = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "d_model" => self.d_model = parse_value(key, value)?,
            "d_ff" => self.d_ff = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "c_mid" => self.c_mid = parse_value(key, value)?,
            "c_h" => self.c_h = parse_value(key, value)?,
            "depth" => self.depth = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "precision" => self.precision = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            "frozen_periods" => self.frozen_periods = parse_bool(key, value)?,
            "instance_norm" => self.instance_norm = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seq_len", self.seq_len.to_string()),
            ("pred_len", self.pred_len.to_string()),
            ("n_vars", self.n_vars.to_string()),
            ("k", self.k.to_string()),
            ("d_model", self.d_model.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("heads", self.heads.to_string()),
            ("c_mid", self.c_mid.to_string()),
            ("c_h", self.c_h.to_string()),
            ("depth", self.depth.to_string()),
            ("dropout", fmt_num(self.dropout)),
            ("precision", self.precision.bits().to_string()),
            ("seed", self.seed.to_string()),
            ("frozen_periods", self.frozen_periods.to_string()),
            ("instance_norm", self.instance_norm.to_string()),
        ]
    }
}

const INSTANCE_EPS: f64 = 1e-5;

/// Per-(batch, variable) mean and std of an input window, `[B, N]` each.
#[derive(Clone, Debug)]
pub struct InstanceStats {
    mean: Vec<f64>,
    std: Vec<f64>,
    vars: usize,
}

impl InstanceStats {
    pub fn of(x: &Tensor) -> Self {
        let (b, s, n) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut mean = vec![0.0; b * n];
        let mut std = vec![0.0; b * n];
        for bi in 0..b {
            for ni in 0..n {
                let vals = (0..s).map(|t| x.data()[(bi * s + t) * n + ni]);
                let m = vals.clone().sum::<f64>() / s as f64;
                let v = vals.map(|x| (x - m) * (x - m)).sum::<f64>() / s as f64;
                mean[bi * n + ni] = m;
                std[bi * n + ni] = (v + INSTANCE_EPS).sqrt();
            }
        }
        InstanceStats { mean, std, vars: n }
    }

    pub fn normalize(&self, x: &Tensor) -> Tensor {
        let n = self.vars;
        let s = x.shape()[1];
        Tensor::from_fn(x.shape(), |i| {
            let j = i[0] * n + i[2];
            (x.data()[(i[0] * s + i[1]) * n + i[2]] - self.mean[j]) / self.std[j]
        })
    }

    /// Constant `[B,P,N]` tiles of std and mean.
    fn tiles(&self, pred_len: usize) -> (Tensor, Tensor) {
        let b = self.mean.len() / self.vars;
        let shape = [b, pred_len, self.vars];
        let n = self.vars;
        (
            Tensor::from_fn(&shape, |i| self.std[i[0] * n + i[2]]),
            Tensor::from_fn(&shape, |i| self.mean[i[0] * n + i[2]]),
        )
    }
}

/// Handles produced by [`Times2D::forward`].
#[derive(Debug)]
pub struct ForwardOutput {
    /// Final forecast `[B,P,N]` in the input's units.
    pub output: Var,
    /// Merged periodic-branch representation `[B,P,N]`.
    pub pdb: Var,
    /// Derivative-heatmap representation `[B,P,N]`.
    pub fsdh: Var,
    pub periods: PeriodSet,
}

#[derive(Clone, Debug)]
pub struct Times2D {
    config: ModelConfig,
    params: ParamStore,
    frozen: Option<PeriodSet>,
}

impl Times2D {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        pdb::init_shared(&config, &mut params);
        fsdh::init_params(&config, &mut params);
        let mut model = Times2D {
            config,
            params,
            frozen: None,
        };
        model.quantize();
        Ok(model)
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore, frozen: Option<PeriodSet>) -> Result<Self> {
        config.validate()?;
        Ok(Times2D {
            config,
            params,
            frozen,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn frozen_periods(&self) -> Option<&PeriodSet> {
        self.frozen.as_ref()
    }

    pub fn set_frozen_periods(&mut self, periods: Option<PeriodSet>) {
        self.frozen = periods;
    }

    /// Rounds all parameters to the configured storage precision.
    pub fn quantize(&mut self) {
        let p = self.config.precision;
        if p == Precision::F64 {
            return;
        }
        for (_, t) in self.params.iter_mut() {
            for v in t.data_mut() {
                *v = p.round(*v);
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let c = &self.config;
        match x.shape() {
            [_, s, n] if *s == c.seq_len && *n == c.n_vars => Ok(()),
            other => Err(Error::Shape(format!(
                "model expects [B,{},{}], got {other:?}",
                c.seq_len, c.n_vars
            ))),
        }
    }

    /// The input as the branches see it (standardized when instance norm is on).
    pub fn prepare_input(&self, x: &Tensor) -> (Tensor, Option<InstanceStats>) {
        if self.config.instance_norm {
            let stats = InstanceStats::of(x);
            (stats.normalize(x), Some(stats))
        } else {
            (x.clone(), None)
        }
    }

    /// Periods from the spectrum of `x` (after instance normalization).
    pub fn estimate_periods(&self, x: &Tensor) -> Result<PeriodSet> {
        self.check_input(x)?;
        let (prepared, _) = self.prepare_input(x);
        top_k_periods(&rfft_magnitude(&prepared)?, self.config.k)
    }

    /// Frozen periods when present, otherwise estimated from `x`.
    pub fn select_periods(&self, x: &Tensor) -> Result<PeriodSet> {
        match &self.frozen {
            Some(p) => Ok(p.clone()),
            None => self.estimate_periods(x),
        }
    }

    /// Creates any missing per-shape parameters; returns how many shapes were added.
    pub fn ensure_params(&mut self, periods: &PeriodSet) -> usize {
        let mut added = 0;
        for e in periods.entries() {
            if pdb::ensure_shape(&self.config, &mut self.params, e.period, e.freq) {
                added += 1;
            }
        }
        if added > 0 {
            self.quantize();
        }
        added
    }

    /// Records the full forward pass on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        x: &Tensor,
        periods: &PeriodSet,
        ctx: &mut ForwardCtx,
    ) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let cfg = &self.config;
        let (prepared, stats) = self.prepare_input(x);
        let input = tape.constant(prepared);

        let mut branches = Vec::with_capacity(periods.len());
        for entry in periods.entries() {
            branches.push(pdb::pdb_branch_forward(tape, binder, input, entry, cfg, ctx)?);
        }
        let pdb_out = pdb::branch_merge(tape, &branches)?;
        let fsdh_out = fsdh::fsdh_forward(tape, binder, input, cfg)?;
        let mut output = tape.add(pdb_out, fsdh_out)?;
        if let Some(stats) = stats {
            let (std, mean) = stats.tiles(cfg.pred_len);
            let std = tape.constant(std);
            let mean = tape.constant(mean);
            output = tape.mul(output, std)?;
            output = tape.add(output, mean)?;
        }
        Ok(ForwardOutput {
            output,
            pdb: pdb_out,
            fsdh: fsdh_out,
            periods: periods.clone(),
        })
    }

    /// Evaluation-mode forecast for `x: [B,S,N]`, instantiating per-shape
    /// parameters for unseen periods if needed.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        let periods = self.select_periods(x)?;
        if self.ensure_params(&periods) > 0 {
            log::warn!("forecasting with untrained parameters for new period shapes");
        }
        self.predict_with(x, &periods)
    }

    /// Evaluation-mode forecast with explicit periods.
    pub fn predict_with(&self, x: &Tensor, periods: &PeriodSet) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params);
        let out = self.forward(&mut tape, &mut binder, x, periods, &mut ForwardCtx::eval())?;
        Ok(tape.value(out.output).clone())
    }
}
