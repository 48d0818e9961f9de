use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tape::masked_softmax;
use super::{clip_global_norm, Grads, Optimizer, OptimizerKind, ParamSet};
use crate::error::{Error, Result};
use crate::eval::argmax;

/// A multiple-choice model: parameters live in a separate [`ParamSet`] so
/// the architecture can be shared across threads while training mutates
/// the values.
pub trait Architecture: Sync {
    type Sample: Sync;

    /// Scores, one per choice.
    fn choice_logits(&self, ps: &ParamSet, sample: &Self::Sample) -> Result<Vec<f64>>;

    /// Choice-masked cross-entropy and its parameter gradients.
    fn loss_and_grads(&self, ps: &ParamSet, sample: &Self::Sample) -> Result<(f64, Grads)>;

    fn target(&self, sample: &Self::Sample) -> usize;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 45,
            batch_size: 32,
            optimizer: OptimizerKind::adagrad(),
            clip: Some(5.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Epoch whose parameters were kept (best validation accuracy).
    pub best_epoch: Option<usize>,
}

/// −ln softmax(logits)[target] over all entries.
pub fn choice_loss(logits: &[f64], target: usize) -> f64 {
    let p = masked_softmax(logits, &vec![true; logits.len()]);
    -p[target].ln()
}

/// Mean loss and accuracy, computed in parallel and reduced in order.
pub fn score<A: Architecture>(arch: &A, ps: &ParamSet, samples: &[A::Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let rows: Vec<Result<(f64, bool)>> = samples
        .par_iter()
        .map(|s| {
            let logits = arch.choice_logits(ps, s)?;
            let t = arch.target(s);
            Ok((choice_loss(&logits, t), argmax(&logits) == t))
        })
        .collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for r in rows {
        let (l, c) = r?;
        loss += l;
        correct += usize::from(c);
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Seeded mini-batch training. With a non-empty validation set the
/// parameters of the best-accuracy epoch (earliest on ties) are restored
/// at the end.
pub fn fit<A: Architecture>(
    arch: &A,
    ps: &mut ParamSet,
    train: &[A::Sample],
    val: &[A::Sample],
    config: &FitConfig,
) -> Result<FitHistory> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let optimizer = Optimizer::new(config.optimizer);
    let mut history = FitHistory::default();
    let mut best: Option<(f64, ParamSet)> = None;
    for epoch in 0..config.epochs {
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut total = 0.0;
        for (iteration, chunk) in order.chunks(config.batch_size.max(1)).enumerate() {
            let batch: Vec<&A::Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = minibatch_step(ps, &batch, &optimizer, config.clip, |ps, s| {
                arch.loss_and_grads(ps, s)
            })
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    iteration,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            total += loss * batch.len() as f64;
        }
        history.train_loss.push(total / train.len() as f64);
        if !val.is_empty() {
            let (vl, va) = score(arch, ps, val)?;
            history.val_loss.push(vl);
            history.val_accuracy.push(va);
            if best.as_ref().map_or(true, |(b, _)| va > *b) {
                best = Some((va, ps.clone()));
                history.best_epoch = Some(epoch);
            }
        }
        log::debug!(
            "epoch {epoch}: train loss {:.4}{}",
            history.train_loss[epoch],
            history
                .val_accuracy
                .last()
                .map(|a| format!(", val acc {a:.4}"))
                .unwrap_or_default()
        );
    }
    if let Some((_, params)) = best {
        for (id, p) in params.iter() {
            ps.get_mut(id).value.clone_from(&p.value);
        }
    }
    Ok(history)
}

/// Per-sample gradients in parallel, summed in sample order, averaged,
/// optionally clipped, then one optimizer step. Returns the mean loss.
pub fn minibatch_step<S, F>(
    ps: &mut ParamSet,
    batch: &[S],
    optimizer: &Optimizer,
    clip: Option<f64>,
    loss_and_grads: F,
) -> Result<f64>
where
    S: Sync,
    F: Fn(&ParamSet, &S) -> Result<(f64, Grads)> + Sync,
{
    if batch.is_empty() {
        return Ok(0.0);
    }
    let frozen: &ParamSet = ps;
    let results: Vec<Result<(f64, Grads)>> =
        batch.par_iter().map(|s| loss_and_grads(frozen, s)).collect();
    let mut total = Grads::for_params(ps);
    let mut loss = 0.0;
    for r in results {
        let (l, g) = r?;
        loss += l;
        total.add(&g);
    }
    let n = batch.len() as f64;
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("mini-batch loss {loss}")));
    }
    ps.zero_grads();
    ps.accumulate(&total, 1.0 / n);
    if let Some(max_norm) = clip {
        clip_global_norm(ps, max_norm);
    }
    optimizer.step(ps)?;
    Ok(loss)
}

/// Sample order for one epoch, a pure function of (seed, epoch).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}
