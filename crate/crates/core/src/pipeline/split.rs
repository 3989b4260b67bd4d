//! User-level train/test split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::util::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    /// Sorted user indices.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle users and keep `round(frac · U)` for training; both sides must be
/// nonempty.
pub fn split_users(users: usize, frac: f64, seed: u64) -> Result<Split> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {frac}"
        )));
    }
    let n_train = (frac * users as f64).round() as usize;
    if n_train == 0 || n_train >= users {
        return Err(Error::InvalidInput(format!(
            "splitting {users} users at {frac} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..users).collect();
    idx.shuffle(&mut rng::stream(seed, &[0x5B17]));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

pub fn split(corpus: &Corpus, frac: f64, seed: u64) -> Result<(Corpus, Corpus, Split)> {
    let s = split_users(corpus.num_users(), frac, seed)?;
    Ok((corpus.subset(&s.train), corpus.subset(&s.test), s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_users_split_eight_two() {
        let s = split_users(10, 0.8, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert_eq!(s, split_users(10, 0.8, 3).unwrap());
    }

    #[test]
    fn empty_sides_are_rejected() {
        assert!(split_users(1, 0.5, 0).is_err());
        assert!(split_users(10, 0.99, 0).is_err());
        assert!(split_users(10, 0.01, 0).is_err());
        assert!(split_users(10, 1.0, 0).unwrap_err().is_config());
    }

    proptest! {
        #[test]
        fn sides_partition_the_users(n in 2usize..300, frac in 0.05f64..0.95, seed in 0u64..100) {
            if let Ok(s) = split_users(n, frac, seed) {
                let mut all = s.train.clone();
                all.extend(&s.test);
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert!(s.train.iter().all(|u| s.test.binary_search(u).is_err()));
            }
        }
    }
}
