//! Per-user train/validation/test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::graph::InteractionSet;
use crate::rng::{derive_seed, Rng};

/// Users with fewer interactions keep all of them in training.
pub const MIN_INTERACTIONS_TO_SPLIT: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidConfig(format!("split ratios must be nonnegative: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split ratios must sum to 1: {parts:?}")));
        }
        Ok(())
    }
}

/// Held-out counts for a user with `n` interactions. The small epsilon keeps
/// products like `10 * 0.1` from flooring to 0.
pub fn held_out_counts(n: usize, spec: &SplitSpec) -> (usize, usize) {
    if n < MIN_INTERACTIONS_TO_SPLIT {
        return (0, 0);
    }
    let mut valid = (n as f64 * spec.valid + 1e-9).floor() as usize;
    let mut test = (n as f64 * spec.test + 1e-9).floor() as usize;
    while valid + test >= n {
        if test >= valid && test > 0 {
            test -= 1;
        } else {
            valid -= 1;
        }
    }
    (valid, test)
}

/// Shuffles each user's items with a generator derived from `(seed, user)`
/// and cuts validation, then test, off the front; the rest trains.
pub fn split_interactions(set: &InteractionSet, spec: &SplitSpec) -> Result<(InteractionSet, InteractionSet, InteractionSet)> {
    spec.validate()?;
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (user, mut items) in set.items_by_user().into_iter().enumerate() {
        let (n_valid, n_test) = held_out_counts(items.len(), spec);
        if n_valid + n_test > 0 {
            let mut rng = Rng::seed_from_u64(derive_seed(spec.seed, user as u64));
            items.shuffle(&mut rng);
        }
        for (pos, item) in items.into_iter().enumerate() {
            let target = if pos < n_valid {
                &mut valid
            } else if pos < n_valid + n_test {
                &mut test
            } else {
                &mut train
            };
            target.push((user, item));
        }
    }
    let (nu, ni) = (set.num_users(), set.num_items());
    Ok((
        InteractionSet::new(nu, ni, train)?,
        InteractionSet::new(nu, ni, valid)?,
        InteractionSet::new(nu, ni, test)?,
    ))
}
