//! Minimal reverse-mode differentiation over `f64` vectors.
//!
//! A [`ParamSet`] owns every learnable array. A [`Tape`] records the
//! forward computation of one sample against a borrowed parameter set and
//! [`Tape::backward`] returns that sample's parameter gradients, so many
//! samples can be taped in parallel and their [`Grads`] summed in a fixed
//! order afterwards.

mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod tape;
mod train;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, rel_err, GradCheckReport, REL_ERR_FLOOR};
pub use layers::{Activation, Dense, LstmCell};
pub use optim::{clip_global_norm, Optimizer, OptimizerKind};
pub use tape::{Tape, Var};
pub(crate) use tape::softmax;
pub use train::{
    choice_loss, epoch_order, fit, minibatch_step, score, Architecture, FitConfig, FitHistory,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
    #[serde(skip)]
    pub accum: Vec<f64>,
    /// Frozen params take part in the forward pass but are never updated.
    pub trainable: bool,
}

impl Param {
    fn new(name: &str, shape: &[usize], value: Vec<f64>, trainable: bool) -> Self {
        let n = value.len();
        Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            grad: vec![0.0; n],
            accum: vec![0.0; n],
            trainable,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Row width for matrices, 1 for vectors.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.value[r * c..(r + 1) * c]
    }
}

/// Xavier-uniform bound √(6 / (fan_in + fan_out)).
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<f64>, trainable: bool) -> ParamId {
        let expected: usize = shape.iter().product();
        assert_eq!(value.len(), expected, "param {name}: value/shape mismatch");
        assert!(!self.by_name.contains_key(name), "duplicate param {name}");
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        self.params.push(Param::new(name, shape, value, trainable));
        ParamId(id)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n], true)
    }

    /// Uniform(−s, s) with the Xavier bound for the given fans.
    pub fn xavier<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let s = xavier_bound(fan_in, fan_out);
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.gen_range(-s..=s)).collect();
        self.add(name, shape, value, true)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `scale · grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &Grads, scale: f64) {
        for (i, slot) in grads.slots.iter().enumerate() {
            if let Some(g) = slot {
                for (dst, src) in self.params[i].grad.iter_mut().zip(g) {
                    *dst += scale * src;
                }
            }
        }
    }

    /// Copies values from `other` for every param with the same name and shape.
    pub fn copy_matching(&mut self, other: &ParamSet) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(&j) = other.by_name.get(&p.name) {
                let q = &other.params[j];
                if q.shape == p.shape {
                    p.value.clone_from(&q.value);
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Replaces values from a list of (name, shape, values) entries.
    pub(crate) fn load_values(&mut self, entries: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<()> {
        for (name, shape, value) in entries {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint has unknown param {name}")))?;
            let p = &mut self.params[id.0];
            if p.shape != shape {
                return Err(Error::Shape(format!(
                    "param {name}: checkpoint shape {shape:?}, model shape {:?}",
                    p.shape
                )));
            }
            p.value = value;
        }
        Ok(())
    }
}

/// Per-parameter gradients of one forward pass; untouched params stay `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads {
    slots: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn for_params(params: &ParamSet) -> Self {
        Grads {
            slots: vec![None; params.len()],
        }
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut Vec<f64> {
        self.slots[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    /// `self += other`, element order fixed.
    pub fn add(&mut self, other: &Grads) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), None);
        }
        for (dst, src) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(src) = src {
                match dst {
                    Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
                    None => *dst = Some(src.clone()),
                }
            }
        }
    }
}
