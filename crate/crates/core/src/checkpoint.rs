//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "T2D1"  u32 version  u32 len  config text (key = value lines)
//! repeated tensor_count times:
//!   u32 len  name   u8 dtype (0 = f32, 1 = f64)   u32 rank   u64 extent × rank   payload
//! ```
//!
//! Model parameters and Adam moments are written in the model's storage
//! precision. Moment counters and data normalization statistics are always
//! `f64`. Loading an `f32` payload widens exactly; loading into a 32-bit
//! configuration rounds `f64` payloads to the nearest `f32`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::parse_kv;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Precision, Times2D};
use crate::params::ParamStore;
use crate::pdb;
use crate::spectral::PeriodSet;
use crate::tensor::Tensor;
use crate::train::{AdamState, Moments};

pub const MAGIC: &[u8; 4] = b"T2D1";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;
const MAX_RANK: u32 = 8;

/// Position of the shuffling/dropout generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Times2D,
    pub optimizer: AdamState,
    pub rng: RngState,
    /// Epoch the state was captured at.
    pub epoch: usize,
    pub norm: Option<NormStats>,
}

impl Checkpoint {
    /// Fresh checkpoint wrapping an untrained or externally trained model.
    pub fn from_model(model: Times2D) -> Self {
        let seed = model.config().seed;
        Checkpoint {
            model,
            optimizer: AdamState::default(),
            rng: RngState { seed, word_pos: 0 },
            epoch: 0,
            norm: None,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    /// Errors with [`Error::Incompatible`] when window or variable sizes differ.
    pub fn check_compatible(&self, cfg: &ModelConfig) -> Result<()> {
        let c = self.config();
        if (c.seq_len, c.pred_len, c.n_vars) != (cfg.seq_len, cfg.pred_len, cfg.n_vars) {
            return Err(Error::Incompatible(format!(
                "checkpoint has S={} P={} N={}, run expects S={} P={} N={}",
                c.seq_len, c.pred_len, c.n_vars, cfg.seq_len, cfg.pred_len, cfg.n_vars
            )));
        }
        Ok(())
    }

    /// Same state at another storage precision.
    pub fn with_precision(&self, precision: Precision) -> Result<Checkpoint> {
        let mut cfg = self.config().clone();
        cfg.precision = precision;
        let mut model = Times2D::from_parts(cfg, self.model.params().clone(), self.model.frozen_periods().cloned())?;
        model.quantize();
        let mut optimizer = self.optimizer.clone();
        round_moments(&mut optimizer, precision);
        Ok(Checkpoint {
            model,
            optimizer,
            rng: self.rng,
            epoch: self.epoch,
            norm: self.norm.clone(),
        })
    }

    fn tensors(&self) -> Vec<(String, &Tensor, u8)> {
        let dtype = match self.config().precision {
            Precision::F32 => DTYPE_F32,
            Precision::F64 => DTYPE_F64,
        };
        let mut out: Vec<(String, &Tensor, u8)> = Vec::new();
        for (name, t) in self.model.params().iter() {
            out.push((name.to_string(), t, dtype));
        }
        for (name, mo) in &self.optimizer.moments {
            out.push((format!("adam.m.{name}"), &mo.m, dtype));
            out.push((format!("adam.v.{name}"), &mo.v, dtype));
        }
        out
    }

    fn config_text(&self, tensor_count: usize) -> String {
        let mut s = String::new();
        for (k, v) in self.config().entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "epoch = {}", self.epoch);
        let _ = writeln!(s, "step = {}", self.optimizer.step);
        let _ = writeln!(s, "rng_seed = {}", self.rng.seed);
        let _ = writeln!(s, "rng_word_pos = {}", self.rng.word_pos);
        if let Some(p) = self.model.frozen_periods() {
            let _ = writeln!(s, "frozen = {}", p.encode());
        }
        let _ = writeln!(s, "tensor_count = {tensor_count}");
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut counters: Vec<(String, Tensor)> = self
            .optimizer
            .moments
            .iter()
            .map(|(name, mo)| (format!("adam.t.{name}"), Tensor::scalar(mo.t as f64)))
            .collect();
        if let Some(n) = &self.norm {
            let vec = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec()).expect("non-empty stats");
            counters.push(("data.norm.mean".into(), vec(&n.mean)));
            counters.push(("data.norm.std".into(), vec(&n.std)));
        }
        let mut tensors = self.tensors();
        tensors.extend(counters.iter().map(|(n, t)| (n.clone(), t, DTYPE_F64)));

        let text = self.config_text(tensors.len());
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        put_bytes(&mut buf, text.as_bytes());
        for (name, t, dtype) in tensors {
            put_bytes(&mut buf, name.as_bytes());
            buf.push(dtype);
            buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                buf.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in t.data() {
                if dtype == DTYPE_F32 {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                } else {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.corrupt_at(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.corrupt_at(4, &format!("unsupported version {version}")));
        }
        let text_start = r.pos;
        let text = r.string()?;
        let header = Header::parse(&text).map_err(|m| r.corrupt_at(text_start, &m))?;

        let mut params = ParamStore::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        let mut t = BTreeMap::new();
        let mut norm_mean = None;
        let mut norm_std = None;
        for _ in 0..header.tensor_count {
            let start = r.pos;
            let name = r.string()?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 && dtype != DTYPE_F64 {
                return Err(r.corrupt_at(start, &format!("unknown dtype {dtype} for `{name}`")));
            }
            let rank = r.u32()?;
            if rank > MAX_RANK {
                return Err(r.corrupt_at(start, &format!("rank {rank} for `{name}`")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                let e = r.u64()?;
                if e == 0 || e > u32::MAX as u64 {
                    return Err(r.corrupt_at(start, &format!("extent {e} for `{name}`")));
                }
                shape.push(e as usize);
            }
            let count = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
            let width = if dtype == DTYPE_F32 { 4 } else { 8 };
            let Some(nbytes) = count.and_then(|c| c.checked_mul(width)) else {
                return Err(r.corrupt_at(start, &format!("oversized tensor `{name}`")));
            };
            let payload = r.take(nbytes)?;
            let data: Vec<f64> = if dtype == DTYPE_F32 {
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect()
            } else {
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            };
            let tensor = Tensor::new(shape, data).map_err(|e| r.corrupt_at(start, &e.to_string()))?;
            let slot = if let Some(p) = name.strip_prefix("adam.m.") {
                m.insert(p.to_string(), tensor)
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                v.insert(p.to_string(), tensor)
            } else if let Some(p) = name.strip_prefix("adam.t.") {
                t.insert(p.to_string(), tensor)
            } else if name == "data.norm.mean" {
                norm_mean.replace(tensor)
            } else if name == "data.norm.std" {
                norm_std.replace(tensor)
            } else {
                let dup = params.contains(&name);
                params.insert(name.clone(), tensor);
                dup.then(|| Tensor::scalar(0.0))
            };
            if slot.is_some() {
                return Err(r.corrupt_at(start, &format!("duplicate tensor `{name}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt_at(r.pos, "trailing bytes after last tensor"));
        }
        let end = r.pos;
        let corrupt = |msg: String| Error::CorruptCheckpoint { offset: end as u64, msg };

        validate_params(&header.model, &mut params).map_err(corrupt)?;
        let mut optimizer = AdamState {
            step: header.step,
            moments: BTreeMap::new(),
        };
        for (name, mt) in m {
            let (Some(vt), Some(tt)) = (v.remove(&name), t.remove(&name)) else {
                return Err(corrupt(format!("incomplete optimizer state for `{name}`")));
            };
            let expected = params.get(&name).map(Tensor::shape);
            if expected != Some(mt.shape()) || expected != Some(vt.shape()) || tt.len() != 1 {
                return Err(corrupt(format!("optimizer state for `{name}` does not match the parameter")));
            }
            optimizer.moments.insert(
                name,
                Moments {
                    m: mt,
                    v: vt,
                    t: tt.item() as u64,
                },
            );
        }
        if !v.is_empty() || !t.is_empty() {
            return Err(corrupt("optimizer state without first moments".into()));
        }
        let norm = match (norm_mean, norm_std) {
            (None, None) => None,
            (Some(mean), Some(std)) if mean.len() == header.model.n_vars && std.len() == header.model.n_vars => {
                Some(NormStats {
                    mean: mean.into_data(),
                    std: std.into_data(),
                })
            }
            _ => return Err(corrupt("normalization statistics are incomplete".into())),
        };
        let frozen = match &header.frozen {
            Some(text) => Some(
                PeriodSet::decode(text, header.model.seq_len).map_err(|e| corrupt(e.to_string()))?,
            ),
            None => None,
        };
        let precision = header.model.precision;
        let mut model = Times2D::from_parts(header.model, params, frozen).map_err(|e| corrupt(e.to_string()))?;
        model.quantize();
        round_moments(&mut optimizer, precision);
        Ok(Checkpoint {
            model,
            optimizer,
            rng: RngState {
                seed: header.rng_seed,
                word_pos: header.rng_word_pos,
            },
            epoch: header.epoch,
            norm,
        })
    }
}

fn round_moments(state: &mut AdamState, precision: Precision) {
    if precision == Precision::F64 {
        return;
    }
    for mo in state.moments.values_mut() {
        for x in mo.m.data_mut().iter_mut().chain(mo.v.data_mut()) {
            *x = precision.round(*x);
        }
    }
}

/// Every stored parameter must be one the configuration would create, with
/// the same shape, and every shared parameter must be present.
fn validate_params(cfg: &ModelConfig, params: &mut ParamStore) -> std::result::Result<(), String> {
    cfg.validate().map_err(|e| e.to_string())?;
    let mut template = Times2D::new(cfg.clone()).map_err(|e| e.to_string())?;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        if let Some((p, f)) = parse_shape_name(name) {
            if f == 0 || f > cfg.seq_len / 2 || p != cfg.seq_len.div_ceil(f) {
                return Err(format!("`{name}` does not describe a valid fold of S={}", cfg.seq_len));
            }
            pdb::ensure_shape(cfg, template.params_mut(), p, f);
        }
    }
    for (name, want) in template.params().iter() {
        match params.get(name) {
            None => return Err(format!("missing parameter `{name}`")),
            Some(t) if t.shape() != want.shape() => {
                return Err(format!(
                    "parameter `{name}` has shape {:?}, configuration implies {:?}",
                    t.shape(),
                    want.shape()
                ))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = names.iter().find(|n| !template.params().contains(n)) {
        return Err(format!("unexpected parameter `{extra}`"));
    }
    Ok(())
}

fn parse_shape_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("pdb.p")?;
    let (shape, _) = rest.split_once('.')?;
    let (p, f) = shape.split_once("_f")?;
    Some((p.parse().ok()?, f.parse().ok()?))
}

struct Header {
    model: ModelConfig,
    epoch: usize,
    step: u64,
    rng_seed: u64,
    rng_word_pos: u128,
    frozen: Option<String>,
    tensor_count: usize,
}

impl Header {
    fn parse(text: &str) -> std::result::Result<Header, String> {
        let mut model = ModelConfig::default();
        let mut h = Header {
            model: ModelConfig::default(),
            epoch: 0,
            step: 0,
            rng_seed: 0,
            rng_word_pos: 0,
            frozen: None,
            tensor_count: usize::MAX,
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}` for `{k}`"))
        }
        for (k, v) in parse_kv(text).map_err(|e| e.to_string())? {
            if model.set(&k, &v).map_err(|e| e.to_string())? {
                continue;
            }
            match k.as_str() {
                "epoch" => h.epoch = num(&k, &v)?,
                "step" => h.step = num(&k, &v)?,
                "rng_seed" => h.rng_seed = num(&k, &v)?,
                "rng_word_pos" => h.rng_word_pos = num(&k, &v)?,
                "frozen" => h.frozen = Some(v),
                "tensor_count" => h.tensor_count = num(&k, &v)?,
                _ => return Err(format!("unknown header key `{k}`")),
            }
        }
        if h.tensor_count == usize::MAX {
            return Err("header lacks tensor_count".into());
        }
        h.model = model;
        Ok(h)
    }
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt_at(&self, offset: usize, msg: &str) -> Error {
        Error::CorruptCheckpoint {
            offset: offset as u64,
            msg: msg.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.corrupt_at(
                self.bytes.len(),
                &format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let start = self.pos;
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.corrupt_at(start, "string is not UTF-8"))
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, c.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
