use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// K-fold partition of `ids`.
///
/// The ids are shuffled once with `seed` and cut into `num_folds` contiguous
/// test blocks whose sizes differ by at most one. For each fold, the first
/// `round(val_fraction * remainder)` ids of the (shuffled) non-test remainder
/// form the validation set and the rest the training set.
pub fn make_folds(
    ids: &[String],
    num_folds: usize,
    seed: u64,
    val_fraction: f64,
) -> Result<Vec<FoldSplit>> {
    if num_folds < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 folds, got {num_folds}"
        )));
    }
    if ids.len() < num_folds {
        return Err(Error::InvalidArgument(format!(
            "{num_folds} folds requested for only {} ids",
            ids.len()
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {val_fraction} outside [0, 1)"
        )));
    }
    let unique: HashSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::InvalidArgument("duplicate ids".into()));
    }

    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = shuffled.len();
    let base = n / num_folds;
    let extra = n % num_folds;
    let mut bounds = Vec::with_capacity(num_folds + 1);
    bounds.push(0);
    for f in 0..num_folds {
        let size = base + usize::from(f < extra);
        bounds.push(bounds[f] + size);
    }

    Ok((0..num_folds)
        .map(|f| {
            let (lo, hi) = (bounds[f], bounds[f + 1]);
            let test_ids = shuffled[lo..hi].to_vec();
            let rest: Vec<String> = shuffled[..lo]
                .iter()
                .chain(&shuffled[hi..])
                .cloned()
                .collect();
            let n_val = (val_fraction * rest.len() as f64).round() as usize;
            FoldSplit {
                fold_index: f,
                val_ids: rest[..n_val].to_vec(),
                train_ids: rest[n_val..].to_vec(),
                test_ids,
            }
        })
        .collect())
}
