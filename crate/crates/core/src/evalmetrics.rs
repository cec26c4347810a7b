//! Label mapping and frame-level segmentation scores.
//!
//! Predicted sub-activity labels are arbitrary, so they are first matched one-to-one to
//! ground-truth labels by maximal frame overlap. Background (0) is fixed to background and
//! never takes part in the matching.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum-cost assignment.
///
/// Non-square matrices are padded with zero-cost rows or columns to `N = max(rows, cols)`.
/// The result has length `N` and sends row `i` to column `result[i]`; indices beyond the
/// original matrix denote padding.
pub fn hungarian(cost: &Array2<f64>) -> Result<Vec<usize>> {
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::input(
            "assignment cost matrix has non-finite entries",
        ));
    }
    let n = cost.nrows().max(cost.ncols());
    if n == 0 {
        return Ok(Vec::new());
    }
    let at = |i: usize, j: usize| cost.get((i, j)).copied().unwrap_or(0.0);

    // Shortest augmenting paths with row/column potentials; index 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Total cost of an assignment on the (implicitly zero-padded) matrix.
pub fn assignment_cost(cost: &Array2<f64>, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get((i, j)).copied().unwrap_or(0.0))
        .sum()
}

/// One-to-one map from predicted to ground-truth labels, with `0 -> 0` fixed.
///
/// Predicted labels without a partner map to nothing and are never counted as correct.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelMapping {
    map: BTreeMap<usize, usize>,
}

impl LabelMapping {
    pub fn identity() -> Self {
        LabelMapping::default()
    }

    /// Explicit pairs `(predicted, ground truth)`; both sides must be non-zero and unique.
    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut targets = BTreeSet::new();
        for &(p, g) in pairs {
            if p == 0 || g == 0 {
                return Err(Error::input("background is fixed and cannot be remapped"));
            }
            if map.insert(p, g).is_some() || !targets.insert(g) {
                return Err(Error::input("label mapping must be one-to-one"));
            }
        }
        Ok(LabelMapping { map })
    }

    /// Hungarian matching maximizing frame overlap across all videos.
    pub fn optimal(gt: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<Self> {
        check_corpus(gt, pred)?;
        let labels = |seqs: &[Vec<usize>]| -> Vec<usize> {
            let set: BTreeSet<usize> = seqs.iter().flatten().copied().filter(|&l| l != 0).collect();
            set.into_iter().collect()
        };
        let (p_labels, g_labels) = (labels(pred), labels(gt));
        let p_index: BTreeMap<usize, usize> =
            p_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let g_index: BTreeMap<usize, usize> =
            g_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
        let mut overlap = Array2::<f64>::zeros((p_labels.len(), g_labels.len()));
        for (g_seq, p_seq) in gt.iter().zip(pred) {
            for (g, p) in g_seq.iter().zip(p_seq) {
                if let (Some(&i), Some(&j)) = (p_index.get(p), g_index.get(g)) {
                    overlap[[i, j]] += 1.0;
                }
            }
        }
        let assignment = hungarian(&overlap.mapv(|c| -c))?;
        let map = p_labels
            .iter()
            .enumerate()
            .filter_map(|(i, &p)| g_labels.get(assignment[i]).map(|&g| (p, g)))
            .collect();
        Ok(LabelMapping { map })
    }

    /// Image of a predicted label; `None` for unmatched labels. Identity when empty.
    pub fn apply(&self, predicted: usize) -> Option<usize> {
        if predicted == 0 || self.map.is_empty() {
            Some(predicted)
        } else {
            self.map.get(&predicted).copied()
        }
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.map.iter().map(|(&p, &g)| (p, g))
    }
}

fn check_lengths(gt: &[usize], pred: &[usize]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::input(format!(
            "ground truth has {} frames but prediction has {}",
            gt.len(),
            pred.len()
        )));
    }
    Ok(())
}

fn check_corpus(gt: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::input(format!(
            "{} ground-truth videos but {} predicted",
            gt.len(),
            pred.len()
        )));
    }
    gt.iter()
        .zip(pred)
        .try_for_each(|(g, p)| check_lengths(g, p))
}

// Mapped classes: ground-truth labels, plus a private class per unmatched predicted label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Class {
    Label(usize),
    Unmatched(usize),
}

fn mapped(pred: &[usize], mapping: &LabelMapping) -> Vec<Class> {
    pred.iter()
        .map(|&p| mapping.apply(p).map_or(Class::Unmatched(p), Class::Label))
        .collect()
}

struct ClassCounts {
    // (true positives, ground-truth frames, predicted frames)
    per_class: BTreeMap<Class, (usize, usize, usize)>,
}

fn class_counts(gt: &[usize], pred: &[usize], mapping: &LabelMapping) -> Result<ClassCounts> {
    check_lengths(gt, pred)?;
    let mut per_class: BTreeMap<Class, (usize, usize, usize)> = BTreeMap::new();
    for (&g, p) in gt.iter().zip(mapped(pred, mapping)) {
        let g = Class::Label(g);
        per_class.entry(g).or_default().1 += 1;
        per_class.entry(p).or_default().2 += 1;
        if g == p {
            per_class.entry(g).or_default().0 += 1;
        }
    }
    Ok(ClassCounts { per_class })
}

/// Fraction of frames whose mapped prediction equals the ground truth.
pub fn mof(gt: &[usize], pred: &[usize], mapping: &LabelMapping) -> Result<f64> {
    check_lengths(gt, pred)?;
    if gt.is_empty() {
        return Ok(1.0);
    }
    let hits = gt
        .iter()
        .zip(mapped(pred, mapping))
        .filter(|(&g, p)| *p == Class::Label(g))
        .count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Mean over classes of hits divided by detections, classes ranging over the union of
/// ground-truth and mapped predicted classes; a class never detected scores 0.
pub fn jaccard_iod(gt: &[usize], pred: &[usize], mapping: &LabelMapping) -> Result<f64> {
    let counts = class_counts(gt, pred, mapping)?;
    Ok(macro_mean(&counts, |tp, _, detected| {
        if detected == 0 {
            0.0
        } else {
            tp as f64 / detected as f64
        }
    }))
}

/// Macro-averaged frame-level F1 over the same class set as [`jaccard_iod`].
pub fn f1_frames(gt: &[usize], pred: &[usize], mapping: &LabelMapping) -> Result<f64> {
    let counts = class_counts(gt, pred, mapping)?;
    Ok(macro_mean(&counts, |tp, truth, detected| {
        if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (truth + detected) as f64
        }
    }))
}

fn macro_mean(counts: &ClassCounts, score: impl Fn(usize, usize, usize) -> f64) -> f64 {
    if counts.per_class.is_empty() {
        return 1.0;
    }
    let total: f64 = counts
        .per_class
        .values()
        .map(|&(tp, truth, detected)| score(tp, truth, detected))
        .sum();
    total / counts.per_class.len() as f64
}

/// Corpus-level scores under the optimal mapping, pooling frames over all videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mof: f64,
    pub jaccard: f64,
    pub f1: f64,
    /// Fraction of ground-truth background frames predicted as background.
    pub background_recall: Option<f64>,
}

pub fn evaluate_corpus(gt: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<Scores> {
    let mapping = LabelMapping::optimal(gt, pred)?;
    let g: Vec<usize> = gt.concat();
    let p: Vec<usize> = pred.concat();
    let bg_truth = g.iter().filter(|&&l| l == 0).count();
    let bg_hit = g.iter().zip(&p).filter(|(&g, &p)| g == 0 && p == 0).count();
    Ok(Scores {
        mof: mof(&g, &p, &mapping)?,
        jaccard: jaccard_iod(&g, &p, &mapping)?,
        f1: f1_frames(&g, &p, &mapping)?,
        background_recall: (bg_truth > 0).then(|| bg_hit as f64 / bg_truth as f64),
    })
}
