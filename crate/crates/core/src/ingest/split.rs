//! Whole-source train/validation/test partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const DEFAULT_RATIO: (u32, u32, u32) = (6, 2, 2);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub ratio: (u32, u32, u32),
    pub seed: u64,
}

/// Apportions `total` items over `weights` by the largest-remainder method.
/// Remainder ties go to the earlier part.
pub fn largest_remainder(total: usize, weights: &[u32]) -> Vec<usize> {
    let denom: u64 = weights.iter().map(|&w| w as u64).sum();
    if denom == 0 {
        return vec![0; weights.len()];
    }
    let mut counts: Vec<usize> = weights.iter().map(|&w| (total as u64 * w as u64 / denom) as usize).collect();
    let mut remainders: Vec<(u64, usize)> = weights.iter().enumerate().map(|(i, &w)| ((total as u64 * w as u64) % denom, i)).collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - counts.iter().sum::<usize>();
    for (_, i) in remainders {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Shuffles sources with `seed` and cuts them at `ratio`. Never splits a source.
pub fn split_dataset(source_ids: &[String], ratio: (u32, u32, u32), seed: u64) -> Result<DatasetSplit> {
    let mut ids = source_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != source_ids.len() {
        return Err(CoreError::Parameter("duplicate source ids".into()));
    }
    let counts = largest_remainder(ids.len(), &[ratio.0, ratio.1, ratio.2]);
    for (name, (&c, &w)) in ["train", "val", "test"].into_iter().zip(counts.iter().zip([ratio.0, ratio.1, ratio.2].iter())) {
        if c == 0 && w > 0 {
            return Err(CoreError::EmptySplit { split: name, total: ids.len() });
        }
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut it = ids.into_iter();
    let train: Vec<String> = it.by_ref().take(counts[0]).collect();
    let val: Vec<String> = it.by_ref().take(counts[1]).collect();
    let test: Vec<String> = it.collect();
    Ok(DatasetSplit { train, val, test, ratio, seed })
}

/// `k` folds of near-equal size over shuffled sources.
pub fn k_folds(source_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 || source_ids.len() < k {
        return Err(CoreError::Parameter(format!("need k >= 2 and at least k sources (k = {k}, sources = {})", source_ids.len())));
    }
    let mut ids = source_ids.to_vec();
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i:03}")).collect()
    }

    #[test]
    fn ten_sources() {
        let s = split_dataset(&ids(10), DEFAULT_RATIO, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
    }

    #[test]
    fn hundred_and_one_sources() {
        assert_eq!(largest_remainder(101, &[6, 2, 2]), vec![61, 20, 20]);
        let s = split_dataset(&ids(101), DEFAULT_RATIO, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (61, 20, 20));
    }

    #[test]
    fn too_few_sources() {
        assert!(matches!(split_dataset(&ids(3), DEFAULT_RATIO, 0), Err(CoreError::EmptySplit { .. })));
    }

    #[test]
    fn deterministic() {
        let a = split_dataset(&ids(20), DEFAULT_RATIO, 9).unwrap();
        let mut rev = ids(20);
        rev.reverse();
        let b = split_dataset(&rev, DEFAULT_RATIO, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn folds_cover() {
        let f = k_folds(&ids(11), 5, 0).unwrap();
        assert_eq!(f.iter().map(Vec::len).sum::<usize>(), 11);
    }
}
