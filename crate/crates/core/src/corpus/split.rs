use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Train/val/test proportions of the published split (14,156 / 1,767 / 3,539).
pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.727, 0.091, 0.182);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle, then contiguous partitions of rounded sizes.
pub fn split_qas(qa_ids: &[String], seed: u64, ratios: (f64, f64, f64)) -> Result<Split> {
    let (r_train, r_val, r_test) = ratios;
    if [r_train, r_val, r_test].iter().any(|r| !r.is_finite() || *r < 0.0)
        || ((r_train + r_val + r_test) - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got ({r_train}, {r_val}, {r_test})"
        )));
    }
    let mut ids = qa_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = ((r_train * n as f64).round() as usize).min(n);
    let n_val = ((r_val * n as f64).round() as usize).min(n - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(Split {
        train: ids,
        val,
        test,
    })
}
