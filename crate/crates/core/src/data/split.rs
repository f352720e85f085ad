use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Split sizes `(floor(n * r_train), floor(n * r_val), remainder)`.
pub fn split_sizes(n: usize, ratios: (f64, f64)) -> Result<(usize, usize, usize)> {
    let (rt, rv) = ratios;
    if !(rt > 0.0 && rv > 0.0 && rt + rv < 1.0) {
        return Err(Error::config(format!(
            "split ratios must be positive with sum < 1, got ({rt}, {rv})"
        )));
    }
    if n < 3 {
        return Err(Error::data(format!("cannot split {n} samples into three sets")));
    }
    let floor = |r: f64| ((n as f64) * r * (1.0 + 1e-12)).floor() as usize;
    let train = floor(rt);
    let val = floor(rv);
    Ok((train, val, n - train - val))
}

/// Seeded partition of `0..n` into train, validation and test indices.
pub fn split_dataset(n: usize, ratios: (f64, f64), seed: u64) -> Result<Split> {
    let (nt, nv, _) = split_sizes(n, ratios)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let test = perm.split_off(nt + nv);
    let val = perm.split_off(nt);
    Ok(Split {
        train: perm,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_cohort_sizes() {
        assert_eq!(split_sizes(652, (0.7, 0.1)).unwrap(), (456, 65, 131));
        assert_eq!(split_dataset(652, (0.7, 0.1), 0).unwrap().sizes(), (456, 65, 131));
        assert_eq!(split_sizes(10, (0.5, 0.2)).unwrap(), (5, 2, 3));
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(split_dataset(2, (0.5, 0.2), 0), Err(Error::Data(_))));
        assert!(matches!(split_dataset(10, (0.8, 0.2), 0), Err(Error::Config(_))));
        assert!(matches!(split_dataset(10, (0.0, 0.2), 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn split_is_partition(n in 3usize..500, rt in 0.05f64..0.6, rv in 0.05f64..0.3, seed in any::<u64>()) {
            let s = split_dataset(n, (rt, rv), seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.sizes(), split_sizes(n, (rt, rv)).unwrap());
            prop_assert_eq!(&s, &split_dataset(n, (rt, rv), seed).unwrap());
        }
    }
}
