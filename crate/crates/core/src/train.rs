//! Losses, Adam, and the epoch loop with validation-based early stopping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, RngState};
use crate::config::{fmt_num, parse_value};
use crate::data::{NormStats, Windowed};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Precision, Times2D};
use crate::params::{Binder, ForwardCtx, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Mae,
    Smape,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::Smape => "smape",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "smape" => Ok(LossKind::Smape),
            _ => Err(Error::Config(format!("unknown loss `{s}` (mse|mae|smape)"))),
        }
    }
}

/// Denominator floor for the differentiable SMAPE.
pub const SMAPE_EPS: f64 = 1e-8;

/// Scalar loss between equally shaped `pred` and `target`.
pub fn compute_loss(tape: &mut Tape, pred: Var, target: Var, kind: LossKind) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::Shape(format!(
            "loss operands differ: {:?} vs {:?}",
            tape.shape(pred),
            tape.shape(target)
        )));
    }
    let diff = tape.sub(pred, target)?;
    match kind {
        LossKind::Mse => {
            let sq = tape.mul(diff, diff)?;
            tape.mean(sq)
        }
        LossKind::Mae => {
            let a = tape.abs(diff)?;
            tape.mean(a)
        }
        LossKind::Smape => {
            let num = tape.abs(diff)?;
            let ap = tape.abs(pred)?;
            let at = tape.abs(target)?;
            let den = tape.add(ap, at)?;
            let den = tape.add_scalar(den, SMAPE_EPS)?;
            let ratio = tape.div(num, den)?;
            let m = tape.mean(ratio)?;
            tape.scale(m, 200.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub patience: usize,
    pub loss: LossKind,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    /// Stop once an epoch's mean training loss falls below this; 0 disables.
    pub stop_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            patience: 10,
            loss: LossKind::Mse,
            grad_clip: 5.0,
            stop_loss: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 || self.grad_clip < 0.0 || self.stop_loss < 0.0 {
            return Err(Error::Config(
                "adam_eps must be > 0; weight_decay, grad_clip and stop_loss >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Applies `key = value`; returns `false` when the key is not a training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "loss" => self.loss = value.parse()?,
            "grad_clip" => self.grad_clip = parse_value(key, value)?,
            "stop_loss" => self.stop_loss = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", fmt_num(self.lr)),
            ("beta1", fmt_num(self.beta1)),
            ("beta2", fmt_num(self.beta2)),
            ("adam_eps", fmt_num(self.adam_eps)),
            ("weight_decay", fmt_num(self.weight_decay)),
            ("patience", self.patience.to_string()),
            ("loss", self.loss.as_str().to_string()),
            ("grad_clip", fmt_num(self.grad_clip)),
            ("stop_loss", fmt_num(self.stop_loss)),
        ]
    }
}

/// Adam moments for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    /// Number of updates this tensor has received.
    pub t: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

/// Optimizer hyperparameters taken from [`TrainConfig`].
#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        AdamHyper {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
            weight_decay: c.weight_decay,
            grad_clip: c.grad_clip,
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = grads.values().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let c = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }
    norm
}

/// One Adam update with bias correction. Parameters without a gradient are
/// left untouched; clipping is applied first when enabled.
pub fn adam_step(
    params: &mut ParamStore,
    mut grads: BTreeMap<String, Tensor>,
    state: &mut AdamState,
    hyper: &AdamHyper,
    precision: Precision,
) -> Result<f64> {
    let norm = clip_grad_norm(&mut grads, hyper.grad_clip);
    state.step += 1;
    for (name, g) in grads {
        let p = params
            .get_mut(&name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient for `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let mo = state.moments.entry(name).or_insert_with(|| Moments {
            m: Tensor::zeros(g.shape()),
            v: Tensor::zeros(g.shape()),
            t: 0,
        });
        mo.t += 1;
        let bc1 = 1.0 - hyper.beta1.powi(mo.t as i32);
        let bc2 = 1.0 - hyper.beta2.powi(mo.t as i32);
        let (m, v) = (mo.m.data_mut(), mo.v.data_mut());
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = precision.round(hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi);
            v[i] = precision.round(hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi);
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let decayed = *w - hyper.lr * hyper.weight_decay * *w;
            *w = precision.round(decayed - hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps));
        }
    }
    Ok(norm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Wall-clock duration of the epoch.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// `epoch,train_loss,val_loss,seconds`; a missing validation loss is `nan`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.epoch,
                fmt_num(r.train_loss),
                fmt_num(r.val_loss.unwrap_or(f64::NAN)),
                fmt_num(r.seconds)
            );
        }
        s
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Training and optional validation windows, already normalized.
pub struct TrainData<'a> {
    pub train: &'a Windowed,
    pub val: Option<&'a Windowed>,
    /// Stored in the checkpoint so forecasts can be mapped back to data units.
    pub norm: Option<NormStats>,
}

pub struct TrainOutcome {
    /// Best-validation state (final state when there is no validation data).
    pub checkpoint: Checkpoint,
    pub history: History,
    pub best_epoch: usize,
}

fn check_data(cfg: &ModelConfig, w: &Windowed, what: &str) -> Result<()> {
    let ws = w.windows();
    if ws.seq_len != cfg.seq_len || ws.pred_len != cfg.pred_len || w.n_vars() != cfg.n_vars {
        return Err(Error::Config(format!(
            "{what} windows are S={} P={} N={}, model expects S={} P={} N={}",
            ws.seq_len,
            ws.pred_len,
            w.n_vars(),
            cfg.seq_len,
            cfg.pred_len,
            cfg.n_vars
        )));
    }
    if w.is_empty() {
        return Err(Error::Config(format!("{what} split has no windows")));
    }
    Ok(())
}

/// One forward/backward pass; returns the loss value and per-name gradients.
pub fn loss_and_grads(
    model: &Times2D,
    x: &Tensor,
    y: &Tensor,
    kind: LossKind,
    ctx: &mut ForwardCtx,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let periods = model.select_periods(x)?;
    let mut tape = Tape::new();
    let mut binder = Binder::new(model.params());
    let out = model.forward(&mut tape, &mut binder, x, &periods, ctx)?;
    let target = tape.constant(y.clone());
    let loss = compute_loss(&mut tape, out.output, target, kind)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Ok((value, BTreeMap::new()));
    }
    let mut grads = tape.backward(loss)?;
    let named = binder
        .bound()
        .filter_map(|(name, v)| grads.take(v).map(|g| (name.to_string(), g)))
        .collect();
    Ok((value, named))
}

/// Mean loss over all windows in evaluation mode.
pub fn evaluate_loss(model: &mut Times2D, data: &Windowed, batch_size: usize, kind: LossKind) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in data.batches(batch_size, false, 0) {
        let periods = model.select_periods(&x)?;
        model.ensure_params(&periods);
        let mut tape = Tape::new();
        let mut binder = Binder::new(model.params());
        let out = model.forward(&mut tape, &mut binder, &x, &periods, &mut ForwardCtx::eval())?;
        let target = tape.constant(y);
        let loss = compute_loss(&mut tape, out.output, target, kind)?;
        let b = x.shape()[0];
        total += tape.value(loss).item() * b as f64;
        count += b;
    }
    Ok(total / count as f64)
}

/// Trains a fresh model. Fully deterministic given `model_cfg.seed`.
pub fn train(model_cfg: &ModelConfig, train_cfg: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    check_data(model_cfg, data.train, "training")?;
    if let Some(v) = data.val {
        check_data(model_cfg, v, "validation")?;
    }
    let mut model = Times2D::new(model_cfg.clone())?;
    if model_cfg.frozen_periods {
        let periods = model.estimate_periods(&data.train.all_inputs())?;
        log::info!("frozen periods: {}", periods.encode());
        model.set_frozen_periods(Some(periods));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model_cfg.seed);
    let mut opt = AdamState::default();
    let hyper = AdamHyper::from(train_cfg);

    let snapshot = |model: &Times2D, opt: &AdamState, rng: &ChaCha8Rng, epoch: usize| Checkpoint {
        model: model.clone(),
        optimizer: opt.clone(),
        rng: RngState {
            seed: model_cfg.seed,
            word_pos: rng.get_word_pos(),
        },
        epoch,
        norm: data.norm.clone(),
    };

    let mut history = History::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut best_epoch = 0;
    let mut waited = 0usize;
    for epoch in 1..=train_cfg.epochs {
        let started = Instant::now();
        let order_seed: u64 = rng.gen();
        let mut total = 0.0;
        let mut count = 0usize;
        for (x, y) in data.train.batches(train_cfg.batch_size, true, order_seed) {
            let periods = model.select_periods(&x)?;
            model.ensure_params(&periods);
            let mut ctx = ForwardCtx::train(model_cfg.dropout, &mut rng);
            let step = opt.step + 1;
            let (loss, grads) = loss_and_grads(&model, &x, &y, train_cfg.loss, &mut ctx).map_err(|e| match e {
                Error::NonFinite { op } => Error::Divergence {
                    epoch,
                    step,
                    msg: format!("non-finite value in `{op}`"),
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    msg: format!("loss is {loss}"),
                });
            }
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    msg: format!("non-finite gradient for `{name}`"),
                });
            }
            adam_step(model.params_mut(), grads, &mut opt, &hyper, model_cfg.precision)?;
            if let Some((name, _)) = model.params().iter().find(|(_, p)| !p.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    msg: format!("parameter `{name}` became non-finite"),
                });
            }
            let b = x.shape()[0];
            total += loss * b as f64;
            count += b;
        }
        let train_loss = total / count as f64;
        let val_loss = match data.val {
            Some(v) => Some(evaluate_loss(&mut model, v, train_cfg.batch_size, train_cfg.loss)?),
            None => None,
        };
        let seconds = started.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: train {} val {} ({seconds:.2}s)",
            fmt_num(train_loss),
            val_loss.map(fmt_num).unwrap_or_else(|| "-".into())
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds,
        });

        let reached = train_loss < train_cfg.stop_loss;
        match val_loss {
            None => {
                best = Some((train_loss, snapshot(&model, &opt, &rng, epoch)));
                best_epoch = epoch;
            }
            Some(v) if best.as_ref().is_none_or(|(b, _)| v < *b) => {
                best = Some((v, snapshot(&model, &opt, &rng, epoch)));
                best_epoch = epoch;
                waited = 0;
            }
            Some(_) => {
                waited += 1;
                if waited > train_cfg.patience {
                    log::info!("early stop after epoch {epoch}; best epoch {best_epoch}");
                    break;
                }
            }
        }
        if reached {
            log::info!("training loss below {} after epoch {epoch}", fmt_num(train_cfg.stop_loss));
            break;
        }
    }
    let checkpoint = match best {
        Some((_, c)) => c,
        None => snapshot(&model, &opt, &rng, 0),
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        best_epoch,
    })
}
