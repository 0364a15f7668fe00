use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Class, Cohort};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

/// Majority class of a subject's sessions; ties go to AD.
pub fn subject_class(cohort: &Cohort, subject: &str) -> Class {
    let ix = &cohort.subjects()[subject];
    let ad = ix.iter().filter(|&&i| cohort.sessions()[i].class == Class::Ad).count();
    if 2 * ad >= ix.len() {
        Class::Ad
    } else {
        Class::Hc
    }
}

/// Assigns whole subjects to `k` folds, stratified by subject class.
///
/// Within each class subjects are shuffled by `seed`, ordered by session
/// count (largest first) and dealt to the fold holding the fewest subjects of
/// that class, breaking ties by fewest sessions and then fold id. Fold `f`'s
/// validation set is its own subjects; its training set is everyone else.
pub fn stratified_subject_kfold(cohort: &Cohort, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut by_class: BTreeMap<Class, Vec<&str>> = BTreeMap::new();
    for subject in cohort.subjects().keys() {
        by_class.entry(subject_class(cohort, subject)).or_default().push(subject);
    }
    for class in [Class::Hc, Class::Ad] {
        let n = by_class.get(&class).map_or(0, Vec::len);
        if n < k {
            return Err(Error::Data(format!("class {class} has {n} subjects, fewer than k = {k}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_subjects: Vec<Vec<&str>> = vec![Vec::new(); k];
    let mut fold_sessions = vec![0usize; k];
    for subjects in by_class.values_mut() {
        subjects.shuffle(&mut rng);
        let size = |s: &str| cohort.subjects()[s].len();
        subjects.sort_by_key(|s| std::cmp::Reverse(size(s)));
        let mut class_count = vec![0usize; k];
        for &s in subjects.iter() {
            let f = (0..k)
                .min_by_key(|&f| (class_count[f], fold_sessions[f], f))
                .expect("k >= 2");
            class_count[f] += 1;
            fold_sessions[f] += size(s);
            fold_subjects[f].push(s);
        }
    }
    let sessions_of = |subjects: &[&str]| -> Vec<String> {
        let mut ids: Vec<String> = subjects
            .iter()
            .flat_map(|s| cohort.subject_sessions(s))
            .map(str::to_string)
            .collect();
        ids.sort();
        ids
    };
    Ok((0..k)
        .map(|f| {
            let others: Vec<&str> = (0..k)
                .filter(|&g| g != f)
                .flat_map(|g| fold_subjects[g].iter().copied())
                .collect();
            FoldSplit {
                fold_id: f,
                train: sessions_of(&others),
                validation: sessions_of(&fold_subjects[f]),
            }
        })
        .collect())
}
