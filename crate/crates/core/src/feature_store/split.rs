//! Patient-level k-fold splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{FeatureSet, UNASSIGNED};
use crate::error::{Error, Result};
use crate::nn::component_rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits sample indices of `fs` into `min(k_requested, patients)` folds.
pub fn patient_split(fs: &FeatureSet, k_requested: usize, seed: u64) -> Result<Vec<Fold>> {
    let patients: Vec<&str> = (0..fs.len()).map(|i| fs.patient_of(i)).collect();
    split_units(&patients, k_requested, seed)
}

/// Splits units labelled by patient id. Units marked unassigned are added
/// to every training portion and to no test portion.
pub fn split_units<S: AsRef<str>>(patients: &[S], k_requested: usize, seed: u64) -> Result<Vec<Fold>> {
    if k_requested == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut unassigned = Vec::new();
    for (i, p) in patients.iter().enumerate() {
        let p = p.as_ref();
        if p == UNASSIGNED {
            unassigned.push(i);
        } else {
            by_patient.entry(p).or_default().push(i);
        }
    }
    if by_patient.is_empty() {
        return Err(Error::invalid("no identified patients to split"));
    }
    let k = k_requested.min(by_patient.len());
    let mut ids: Vec<&str> = by_patient.keys().copied().collect();
    ids.shuffle(&mut component_rng(seed, "patient_split"));
    let mut fold_of = BTreeMap::new();
    for (n, id) in ids.iter().enumerate() {
        fold_of.insert(*id, n % k);
    }
    let folds = (0..k)
        .map(|f| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (i, p) in patients.iter().enumerate() {
                let p = p.as_ref();
                if p == UNASSIGNED {
                    train.push(i);
                } else if fold_of[p] == f {
                    test.push(i);
                } else {
                    train.push(i);
                }
            }
            Fold { train, test }
        })
        .collect();
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_patients_give_three_folds() {
        let p = ["a", "b", "c", "a", "b", "c"];
        assert_eq!(split_units(&p, 5, 0).unwrap().len(), 3);
    }

    #[test]
    fn all_unassigned_is_an_error() {
        assert!(split_units(&[UNASSIGNED, UNASSIGNED], 5, 0).is_err());
    }
}
