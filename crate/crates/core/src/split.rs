//! Deterministic train/val/test partitioning.
//!
//! Items are keyed by id: the assignment permutes ids in sorted order under
//! a seeded shuffle, so the mapping from id to split depends only on the
//! id set and the seed, never on the order items arrive in.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split name {other:?}"))),
        }
    }
}

/// Fractions are 7:1:2. Validation and test sizes round down; the train
/// split absorbs the remainder, so small datasets lose eval items before
/// they lose training items.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let val = n / 10;
    let test = n / 5;
    (n - val - test, val, test)
}

/// Assigns a split to every id, returned in input order. Ids must be
/// unique, and there must be at least 10 so every split is populated. Two
/// calls with the same id set and seed agree even if the input orders
/// differ.
pub fn assign_splits(ids: &[String], seed: u64) -> Result<Vec<Split>> {
    if ids.len() < 10 {
        return Err(Error::Usage(format!(
            "splitting needs at least 10 samples, got {}",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    for w in order.windows(2) {
        if ids[w[0]] == ids[w[1]] {
            return Err(Error::Data(format!("duplicate id {:?}", ids[w[0]])));
        }
    }
    let mut rng = rng_from_seed(seed);
    order.shuffle(&mut rng);

    let (train, val, _test) = split_counts(ids.len());
    let mut out = vec![Split::Train; ids.len()];
    for (pos, &idx) in order.iter().enumerate() {
        out[idx] = if pos < train {
            Split::Train
        } else if pos < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}
