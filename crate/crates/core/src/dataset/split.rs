use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shuffled train/test split of step ids. `floor(fraction * n)` ids go to
/// training; both halves are returned sorted.
pub fn split_train_test(step_ids: &[usize], train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut ids = step_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * ids.len() as f64).floor() as usize;
    let mut test = ids.split_off(n_train);
    ids.sort_unstable();
    test.sort_unstable();
    Ok((ids, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_scale_counts() {
        let ids: Vec<usize> = (0..35_136).collect();
        let (train, test) = split_train_test(&ids, 0.1, 1).unwrap();
        assert_eq!((train.len(), test.len()), (3_513, 31_623));
    }

    #[test]
    fn half_split_and_seed_stability() {
        let ids: Vec<usize> = (0..10).collect();
        let a = split_train_test(&ids, 0.5, 42).unwrap();
        assert_eq!((a.0.len(), a.1.len()), (5, 5));
        assert_eq!(a, split_train_test(&ids, 0.5, 42).unwrap());
    }

    #[test]
    fn degenerate_fraction() {
        assert!(split_train_test(&[1, 2, 3], 0.0, 1).is_err());
        assert!(split_train_test(&[1, 2, 3], 1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn disjoint_and_exhaustive(n in 1usize..400, frac in 0.01f64..0.99, seed in any::<u64>()) {
            let ids: Vec<usize> = (0..n).collect();
            let (train, test) = split_train_test(&ids, frac, seed).unwrap();
            prop_assert_eq!(train.len(), (frac * n as f64).floor() as usize);
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, ids);
        }
    }
}
