use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::rng;
use crate::volume::{SubjectRecord, Tracer};

pub const FOLD_COUNT: usize = 5;

/// Stratification key: tracer and lesion presence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stratum {
    pub tracer: Option<Tracer>,
    pub has_lesion: bool,
}

impl Stratum {
    /// FDG before PSMA before unknown tracer; lesion strata first.
    fn order(self) -> (u8, u8) {
        let t = match self.tracer {
            Some(Tracer::Fdg) => 0,
            Some(Tracer::Psma) => 1,
            None => 2,
        };
        (t, !self.has_lesion as u8)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldKey {
    pub id: String,
    pub stratum: Stratum,
}

impl FoldKey {
    pub fn of(rec: &SubjectRecord) -> Self {
        Self {
            id: rec.id.clone(),
            stratum: Stratum {
                tracer: rec.tracer,
                has_lesion: rec.has_lesion(),
            },
        }
    }
}

/// Stratified 5-fold partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_count: usize,
    pub assignments: BTreeMap<String, usize>,
    pub strata: BTreeMap<String, Stratum>,
}

impl FoldSplit {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    /// Ids in `fold`, sorted.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn check_fold(&self, fold: usize) -> Result<(), TrainError> {
        if fold >= self.fold_count {
            return Err(TrainError::InvalidFold {
                fold,
                count: self.fold_count,
            });
        }
        Ok(())
    }
}

pub fn make_folds(subjects: &[SubjectRecord], seed: u64) -> Result<FoldSplit, TrainError> {
    let keys: Vec<FoldKey> = subjects.iter().map(FoldKey::of).collect();
    make_folds_from_keys(&keys, seed)
}

/// Each stratum is shuffled and dealt round-robin, continuing from where
/// the previous stratum stopped, so both strata and fold sizes stay within
/// one of each other.
pub fn make_folds_from_keys(keys: &[FoldKey], seed: u64) -> Result<FoldSplit, TrainError> {
    if keys.len() < FOLD_COUNT {
        return Err(TrainError::TooFewSubjects {
            need: FOLD_COUNT,
            got: keys.len(),
        });
    }
    let mut groups: BTreeMap<(u8, u8), (Stratum, Vec<&str>)> = BTreeMap::new();
    let mut strata = BTreeMap::new();
    for k in keys {
        if strata.insert(k.id.clone(), k.stratum).is_some() {
            return Err(TrainError::DuplicateId(k.id.clone()));
        }
        groups
            .entry(k.stratum.order())
            .or_insert_with(|| (k.stratum, Vec::new()))
            .1
            .push(&k.id);
    }
    let mut assignments = BTreeMap::new();
    let mut offset = 0;
    for ((t, l), (_, mut ids)) in groups {
        ids.sort_unstable();
        ids.shuffle(&mut rng::stream(&[seed, 0xF01D, t as u64, l as u64]));
        for (k, id) in ids.iter().enumerate() {
            assignments.insert(String::from(*id), (offset + k) % FOLD_COUNT);
        }
        offset += ids.len();
    }
    Ok(FoldSplit {
        fold_count: FOLD_COUNT,
        assignments,
        strata,
    })
}
