use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Subject → fold assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub k: usize,
    pub folds: BTreeMap<String, usize>,
}

impl DatasetSplit {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds.get(subject).copied()
    }

    pub fn subjects_in(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

/// Shuffles the distinct subjects with `seed` and deals them round-robin
/// into `k` folds.
pub fn kfold_split<'a>(subjects: impl IntoIterator<Item = &'a str>, k: usize, seed: u64) -> Result<DatasetSplit, DataError> {
    let unique: BTreeSet<&str> = subjects.into_iter().collect();
    if k == 0 || k > unique.len() {
        return Err(DataError::Invalid(format!("cannot split {} subjects into {k} folds", unique.len())));
    }
    let mut order: Vec<&str> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = order.iter().enumerate().map(|(i, s)| (s.to_string(), i % k)).collect();
    Ok(DatasetSplit { k, folds })
}

/// Subject-wise holdout: roughly `fraction` of the subjects (at least one,
/// and at least one left over) go to the second set.
pub fn holdout_subjects<'a>(
    subjects: impl IntoIterator<Item = &'a str>,
    fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>), DataError> {
    let unique: BTreeSet<&str> = subjects.into_iter().collect();
    if unique.len() < 2 {
        return Err(DataError::Invalid(format!("holdout needs at least 2 subjects, got {}", unique.len())));
    }
    let mut order: Vec<&str> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = ((order.len() as f64 * fraction).round() as usize).clamp(1, order.len() - 1);
    let (b, a) = order.split_at(held);
    Ok((
        a.iter().map(|s| s.to_string()).collect(),
        b.iter().map(|s| s.to_string()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_subjects_five_folds() {
        let subjects: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let split = kfold_split(subjects.iter().map(String::as_str), 5, 1).unwrap();
        for f in 0..5 {
            assert_eq!(split.subjects_in(f).len(), 2);
        }
    }

    #[test]
    fn shared_subject_shares_fold() {
        // two records of s3
        let records = ["s1", "s2", "s3", "s3", "s4"];
        let split = kfold_split(records, 2, 9).unwrap();
        assert_eq!(split.folds.len(), 4);
        assert!(split.fold_of("s3").is_some());
    }

    #[test]
    fn too_many_folds() {
        assert!(kfold_split(["a", "b"], 3, 0).is_err());
        assert!(kfold_split(["a", "b"], 0, 0).is_err());
    }

    #[test]
    fn holdout_is_disjoint_and_sized() {
        let subjects: Vec<String> = (0..20).map(|i| format!("s{i}")).collect();
        let (a, b) = holdout_subjects(subjects.iter().map(String::as_str), 0.3, 4).unwrap();
        assert_eq!((a.len(), b.len()), (14, 6));
        assert!(a.is_disjoint(&b));
    }

    proptest! {
        #[test]
        fn folds_partition_subjects(n in 1usize..60, k in 1usize..10, seed in 0u64..1000) {
            prop_assume!(k <= n);
            let subjects: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
            let split = kfold_split(subjects.iter().map(String::as_str), k, seed).unwrap();
            let again = kfold_split(subjects.iter().map(String::as_str), k, seed).unwrap();
            prop_assert_eq!(&split, &again);
            prop_assert_eq!(split.folds.len(), n);
            let mut union: Vec<&str> = (0..k).flat_map(|f| split.subjects_in(f)).collect();
            union.sort();
            let mut all: Vec<&str> = subjects.iter().map(String::as_str).collect();
            all.sort();
            prop_assert_eq!(union, all);
            for f in 0..k {
                let size = split.subjects_in(f).len();
                prop_assert!(size == n / k || size == n / k + 1);
            }
        }
    }
}
