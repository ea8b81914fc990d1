//! Subject-disjoint train/test splitting and group-stratified k-fold.
//!
//! Subjects, not samples, are the unit of assignment: no subject ever
//! appears on both sides of a split or in two validation folds. Everything
//! is deterministic given the seed.

use std::collections::BTreeSet;

use crate::corpus::{ClassLabel, Corpus};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Subjects of one class with their per-subject sample counts.
type ClassSubjects<'a> = Vec<(&'a str, usize)>;

/// Subjects of each class, seed-shuffled, with their sample counts.
fn subjects_by_class(
    corpus: &Corpus,
    seed: u64,
) -> Result<Vec<(ClassLabel, ClassSubjects<'_>)>> {
    let labels = corpus.subject_labels()?;
    let mut per_class: Vec<ClassSubjects<'_>> = vec![Vec::new(); 4];
    // BTreeMap iteration gives a deterministic base order before shuffling.
    for (subject, label) in &labels {
        let count = corpus
            .samples
            .iter()
            .filter(|s| s.subject_id == *subject)
            .count();
        per_class[label.index()].push((subject, count));
    }
    let mut rng = Rng::seed(seed);
    let mut out = Vec::new();
    for (i, mut subs) in per_class.into_iter().enumerate() {
        if subs.is_empty() {
            continue;
        }
        rng.shuffle(&mut subs);
        out.push((ClassLabel::from_index(i)?, subs));
    }
    Ok(out)
}

/// Split into subject-disjoint train/test parts. Per class, the subject cut
/// is chosen so the train-side *sample* share is as close to `ratio` as
/// subject granularity allows, with both sides non-empty.
pub fn split_disjoint_subjects(
    corpus: &Corpus,
    ratio: f64,
    seed: u64,
) -> Result<(Corpus, Corpus)> {
    if !(0.0..1.0).contains(&ratio) || ratio <= 0.0 {
        return Err(Error::invalid(format!("split ratio {ratio} not in (0,1)")));
    }
    if corpus.is_empty() {
        return Err(Error::data("split: empty corpus"));
    }
    let mut train_subjects: BTreeSet<&str> = BTreeSet::new();
    let mut test_subjects: BTreeSet<&str> = BTreeSet::new();
    for (label, subs) in subjects_by_class(corpus, seed)? {
        if subs.len() < 2 {
            return Err(Error::data(format!(
                "class {label} has {} subject(s); need at least 2 to split",
                subs.len()
            )));
        }
        let total: usize = subs.iter().map(|(_, c)| c).sum();
        // Cut after k subjects, 1..len, minimizing |train share - ratio|.
        let mut best_k = 1;
        let mut best_err = f64::INFINITY;
        let mut run = 0usize;
        for (k, (_, c)) in subs.iter().enumerate() {
            run += c;
            let k = k + 1;
            if k == subs.len() {
                break;
            }
            let err = (run as f64 / total as f64 - ratio).abs();
            if err < best_err {
                best_err = err;
                best_k = k;
            }
        }
        for (i, (subject, _)) in subs.iter().enumerate() {
            if i < best_k {
                train_subjects.insert(subject);
            } else {
                test_subjects.insert(subject);
            }
        }
    }
    Ok((
        corpus.filter_subjects(&train_subjects),
        corpus.filter_subjects(&test_subjects),
    ))
}

/// Group-stratified k-fold: every subject lands in exactly one validation
/// fold, and each fold's class mix stays within one subject of proportional.
pub fn group_stratified_kfold(
    corpus: &Corpus,
    k: usize,
    seed: u64,
) -> Result<Vec<(Corpus, Corpus)>> {
    if k < 2 {
        return Err(Error::invalid(format!("kfold: k must be >= 2, got {k}")));
    }
    let by_class = subjects_by_class(corpus, seed)?;
    if by_class.is_empty() {
        return Err(Error::data("kfold: empty corpus"));
    }
    for (label, subs) in &by_class {
        if subs.len() < k {
            return Err(Error::data(format!(
                "class {label} has {} subject(s); need at least {k} for {k}-fold",
                subs.len()
            )));
        }
    }
    // Round-robin deal within each class keeps per-fold class counts within
    // one subject of proportional.
    let mut fold_subjects: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); k];
    for (_, subs) in &by_class {
        for (i, (subject, _)) in subs.iter().enumerate() {
            fold_subjects[i % k].insert(subject);
        }
    }
    let all: BTreeSet<&str> = corpus.subjects().into_iter().collect();
    let mut out = Vec::with_capacity(k);
    for fold in &fold_subjects {
        let train: BTreeSet<&str> = all.difference(fold).copied().collect();
        out.push((corpus.filter_subjects(&train), corpus.filter_subjects(fold)));
    }
    Ok(out)
}
