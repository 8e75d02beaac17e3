//! Named parameter storage and per-forward binding onto a tape.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Trainable tensors keyed by dotted name, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.map.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Zeroes every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.map.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().fill(0.0);
            }
        }
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// uniform(-1/√fan_in, 1/√fan_in), seeded by the model seed and the tensor name
/// so lazily created tensors do not depend on creation order.
pub fn init_uniform(name: &str, shape: &[usize], fan_in: usize, seed: u64) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(name));
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Maps parameter names to the tape leaves created for one forward pass.
pub struct Binder<'a> {
    store: &'a ParamStore,
    vars: BTreeMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Binder {
            store,
            vars: BTreeMap::new(),
        }
    }

    /// Leaf for `name`, created on first use.
    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self.store.get(name).ok_or_else(|| {
            Error::Contract(format!("parameter `{name}` has not been instantiated"))
        })?;
        let v = tape.leaf(value.clone());
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Uses `var` for `name` instead of a fresh leaf.
    pub fn bind(&mut self, name: &str, var: Var) {
        self.vars.insert(name.to_string(), var);
    }

    /// Parameters touched by the forward pass, in name order.
    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Training/evaluation switch plus the dropout RNG.
pub struct ForwardCtx<'r> {
    training: bool,
    dropout: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> ForwardCtx<'r> {
    pub fn eval() -> Self {
        ForwardCtx {
            training: false,
            dropout: 0.0,
            rng: None,
        }
    }

    pub fn train(dropout: f64, rng: &'r mut ChaCha8Rng) -> Self {
        ForwardCtx {
            training: true,
            dropout,
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Inverted dropout; identity in evaluation mode.
    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let p = self.dropout;
        let Some(rng) = self.rng.as_deref_mut() else { return Ok(x) };
        if !self.training || p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = Tensor::from_fn(tape.shape(x), |_| if rng.gen::<f64>() < p { 0.0 } else { keep });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}

/// `x[m,in] · W[in,out] + b[out]` using parameters `{prefix}.weight` / `{prefix}.bias`.
pub fn linear(tape: &mut Tape, binder: &mut Binder, x: Var, prefix: &str) -> Result<Var> {
    let w = binder.var(tape, &format!("{prefix}.weight"))?;
    let b = binder.var(tape, &format!("{prefix}.bias"))?;
    let y = tape.matmul(x, w)?;
    add_row_bias(tape, y, b)
}

/// Adds `b[n]` to every row of `y[m,n]` as `y + 1[m,1]·b[1,n]`.
pub fn add_row_bias(tape: &mut Tape, y: Var, b: Var) -> Result<Var> {
    let &[m, n] = tape.shape(y) else {
        return Err(Error::Shape(format!("row bias needs a matrix, got {:?}", tape.shape(y))));
    };
    let ones = tape.constant(Tensor::ones(&[m, 1]));
    let b_row = tape.reshape(b, &[1, n])?;
    let tiled = tape.matmul(ones, b_row)?;
    tape.add(y, tiled)
}

/// Registers a `[fan_in, fan_out]` weight and zero bias under `prefix`.
pub fn init_linear(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, seed: u64) {
    let wname = format!("{prefix}.weight");
    let w = init_uniform(&wname, &[fan_in, fan_out], fan_in, seed);
    store.insert(wname, w);
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
}
