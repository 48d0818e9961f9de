use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { lr: f64 },
    /// `initial_accumulator` seeds every per-coordinate sum of squares.
    Adagrad {
        lr: f64,
        eps: f64,
        #[serde(default)]
        initial_accumulator: f64,
    },
}

impl OptimizerKind {
    pub fn sgd() -> Self {
        OptimizerKind::Sgd { lr: 0.05 }
    }

    pub fn adagrad() -> Self {
        OptimizerKind::Adagrad {
            lr: 0.1,
            eps: 1e-8,
            initial_accumulator: 0.01,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd { .. } => "sgd",
            OptimizerKind::Adagrad { .. } => "adagrad",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer { kind }
    }

    /// Applies the stored gradients to every trainable param, then zeroes them.
    pub fn step(&self, ps: &mut ParamSet) -> Result<()> {
        for (_, p) in ps.iter() {
            if p.trainable && p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        let ids: Vec<_> = ps.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = ps.get_mut(id);
            if p.trainable {
                match self.kind {
                    OptimizerKind::Sgd { lr } => {
                        for (v, g) in p.value.iter_mut().zip(&p.grad) {
                            *v -= lr * g;
                        }
                    }
                    OptimizerKind::Adagrad {
                        lr,
                        eps,
                        initial_accumulator,
                    } => {
                        for ((v, g), a) in p.value.iter_mut().zip(&p.grad).zip(p.accum.iter_mut()) {
                            *a += g * g;
                            *v -= lr * g / ((initial_accumulator + *a).sqrt() + eps);
                        }
                    }
                }
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        Ok(())
    }
}

/// Rescales trainable gradients so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(ps: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = ps
        .params()
        .iter()
        .filter(|p| p.trainable)
        .flat_map(|p| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        let ids: Vec<_> = ps.iter().map(|(id, _)| id).collect();
        for id in ids {
            ps.get_mut(id).grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}
