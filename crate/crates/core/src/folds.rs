//! Cross-validation fold plans built from sorted patient-id chunks.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FOLD_SIZES: [usize; 4] = [3, 3, 3, 2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl Fold {
    /// Validation and test ids together.
    pub fn excluded(&self) -> impl Iterator<Item = &String> {
        self.val_ids.iter().chain(&self.test_ids)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Sorts the ids, cuts them into excluded groups of `fold_sizes`, and makes the
/// first `val_per_fold` ids of each group validation, the rest test, and all
/// other ids training.
pub fn make_folds<S: AsRef<str>>(patient_ids: &[S], fold_sizes: &[usize], val_per_fold: usize) -> Result<FoldPlan> {
    let mut ids: Vec<String> = patient_ids.iter().map(|s| String::from(s.as_ref())).collect();
    ids.sort();
    let total: usize = fold_sizes.iter().sum();
    if total != ids.len() {
        return Err(Error::SizeMismatch(format!(
            "fold sizes {fold_sizes:?} sum to {total}, but there are {} patients",
            ids.len()
        )));
    }
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig(String::from("duplicate patient id")));
    }
    if let Some(&s) = fold_sizes.iter().find(|&&s| s <= val_per_fold) {
        return Err(Error::InvalidConfig(format!(
            "fold of size {s} leaves no test patient with {val_per_fold} validation ids"
        )));
    }

    let mut folds = Vec::with_capacity(fold_sizes.len());
    let mut start = 0;
    for &size in fold_sizes {
        let group = &ids[start..start + size];
        let train_ids = ids[..start].iter().chain(&ids[start + size..]).cloned().collect();
        folds.push(Fold {
            train_ids,
            val_ids: group[..val_per_fold].to_vec(),
            test_ids: group[val_per_fold..].to_vec(),
        });
        start += size;
    }
    let plan = FoldPlan { folds };
    plan.check(&ids)?;
    Ok(plan)
}

impl FoldPlan {
    /// Asserts disjoint sets within each fold, full coverage, and that every id
    /// is excluded exactly once across folds.
    pub fn check<S: AsRef<str>>(&self, all_ids: &[S]) -> Result<()> {
        let all: BTreeSet<&str> = all_ids.iter().map(AsRef::as_ref).collect();
        let mut excluded_count = alloc::collections::BTreeMap::<&str, usize>::new();
        for (i, f) in self.folds.iter().enumerate() {
            let train: BTreeSet<&str> = f.train_ids.iter().map(String::as_str).collect();
            let val: BTreeSet<&str> = f.val_ids.iter().map(String::as_str).collect();
            let test: BTreeSet<&str> = f.test_ids.iter().map(String::as_str).collect();
            let sizes = train.len() + val.len() + test.len();
            let union: BTreeSet<&str> = train.iter().chain(&val).chain(&test).copied().collect();
            if union.len() != sizes || union != all {
                return Err(Error::InvalidConfig(format!("fold {i} leaks patients or misses some")));
            }
            for id in val.iter().chain(&test) {
                *excluded_count.entry(id).or_default() += 1;
            }
        }
        if excluded_count.len() != all.len() || excluded_count.values().any(|&c| c != 1) {
            return Err(Error::InvalidConfig(String::from("every patient must be excluded exactly once")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("p{i:02}")).collect()
    }

    #[test]
    fn eleven_patients_give_four_folds() {
        let plan = make_folds(&ids(11), &DEFAULT_FOLD_SIZES, 1).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.excluded().count()).collect();
        assert_eq!(sizes, vec![3, 3, 3, 2]);
        let f = &plan.folds[0];
        assert_eq!(f.val_ids, vec!["p01"]);
        assert_eq!(f.test_ids, vec!["p02", "p03"]);
        assert_eq!(f.train_ids, ids(11)[3..].to_vec());
        assert_eq!(plan.folds[3].val_ids, vec!["p10"]);
        assert_eq!(plan.folds[3].test_ids, vec!["p11"]);
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut shuffled = ids(11);
        shuffled.reverse();
        assert_eq!(
            make_folds(&shuffled, &DEFAULT_FOLD_SIZES, 1).unwrap(),
            make_folds(&ids(11), &DEFAULT_FOLD_SIZES, 1).unwrap()
        );
    }

    #[test]
    fn wrong_total_is_size_mismatch() {
        assert!(matches!(make_folds(&ids(10), &DEFAULT_FOLD_SIZES, 1), Err(Error::SizeMismatch(_))));
    }

    #[test]
    fn duplicates_and_empty_test_rejected() {
        let mut dup = ids(11);
        dup[1] = dup[0].clone();
        assert!(make_folds(&dup, &DEFAULT_FOLD_SIZES, 1).is_err());
        assert!(make_folds(&ids(4), &[2, 2], 2).is_err());
    }

    #[test]
    fn check_detects_leakage() {
        let mut plan = make_folds(&ids(11), &DEFAULT_FOLD_SIZES, 1).unwrap();
        let leaked = plan.folds[0].test_ids[0].clone();
        plan.folds[0].train_ids.push(leaked);
        assert!(plan.check(&ids(11)).is_err());
    }
}
