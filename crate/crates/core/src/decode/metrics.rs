//! Bracketing F1, temporal IoU, greedy clip alignment and span-clip F1.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::tree::{nontrivial_spans, BinaryTree};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipInterval {
    pub start: f64,
    pub end: f64,
}

impl ClipInterval {
    pub fn new(start: f64, end: f64) -> Self {
        ClipInterval { start, end }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// `2TP / (2TP + FP + FN)`; an empty-versus-empty comparison scores 1.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Pool counts over the corpus, then compute F1.
    Corpus,
    /// Average per-sentence F1.
    Sentence,
}

pub fn span_counts(pred: &[(usize, usize)], gold: &[(usize, usize)]) -> Counts {
    let p = nontrivial_spans(pred);
    let g = nontrivial_spans(gold);
    let tp = p.intersection(&g).count();
    Counts {
        tp,
        fp: p.len() - tp,
        fn_: g.len() - tp,
    }
}

/// Folds per-sentence counts into a corpus- or sentence-level score.
pub fn aggregate(per_sentence: &[Counts], mode: Averaging) -> f64 {
    match mode {
        Averaging::Corpus => per_sentence.iter().fold(Counts::default(), |a, c| a.add(*c)).f1(),
        Averaging::Sentence => {
            if per_sentence.is_empty() {
                return 1.0;
            }
            per_sentence.iter().map(Counts::f1).sum::<f64>() / per_sentence.len() as f64
        }
    }
}

/// Per-sentence span counts for paired trees over identical leaf counts.
pub fn bracket_counts(pred: &[BinaryTree], gold: &[BinaryTree]) -> Result<Vec<Counts>> {
    if pred.len() != gold.len() {
        return Err(Error::Pairing(format!("{} predicted trees for {} gold trees", pred.len(), gold.len())));
    }
    pred.iter()
        .zip(gold)
        .enumerate()
        .map(|(k, (p, g))| {
            if p.leaf_count() != g.leaf_count() {
                return Err(Error::Pairing(format!(
                    "sentence {k}: predicted tree has {} leaves, gold has {}",
                    p.leaf_count(),
                    g.leaf_count()
                )));
            }
            Ok(span_counts(&p.brackets(), &g.brackets()))
        })
        .collect()
}

pub fn bracketing_f1(pred: &[BinaryTree], gold: &[BinaryTree], mode: Averaging) -> Result<f64> {
    Ok(aggregate(&bracket_counts(pred, gold)?, mode))
}

/// Temporal intersection over union.
pub fn tiou(a: &ClipInterval, b: &ClipInterval) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.duration() + b.duration() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy gold-to-prediction clip alignment.
///
/// Gold clips are visited in order; each takes the unconsumed prediction
/// with the largest tIoU strictly above `threshold` (earliest on ties).
/// The result has one entry per gold clip.
pub fn align_clips(pred: &[ClipInterval], gold: &[ClipInterval], threshold: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; pred.len()];
    gold.iter()
        .map(|g| {
            let mut best: Option<(usize, f64)> = None;
            for (m, p) in pred.iter().enumerate() {
                if used[m] {
                    continue;
                }
                let v = tiou(g, p);
                if v > threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((m, v));
                }
            }
            best.map(|(m, _)| {
                used[m] = true;
                m
            })
        })
        .collect()
}

/// Span counts where a predicted span matches a gold span iff its head and
/// tail clips are the ones aligned to the gold head and tail.
pub fn scf1_counts(
    pred_tree: &BinaryTree,
    pred_clips: &[ClipInterval],
    gold_tree: &BinaryTree,
    gold_clips: &[ClipInterval],
    threshold: f64,
) -> Result<Counts> {
    if pred_tree.leaf_count() != pred_clips.len() || gold_tree.leaf_count() != gold_clips.len() {
        return Err(Error::Pairing("tree leaf count differs from its clip count".into()));
    }
    let mapping = align_clips(pred_clips, gold_clips, threshold);
    let pred: BTreeSet<(usize, usize)> = nontrivial_spans(&pred_tree.brackets());
    let gold: BTreeSet<(usize, usize)> = nontrivial_spans(&gold_tree.brackets());
    let tp = gold
        .iter()
        .filter(|(h, t)| match (mapping[*h], mapping[*t]) {
            (Some(ph), Some(pt)) => pred.contains(&(ph, pt)),
            _ => false,
        })
        .count();
    Ok(Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    })
}

pub fn scf1(
    pred_tree: &BinaryTree,
    pred_clips: &[ClipInterval],
    gold_tree: &BinaryTree,
    gold_clips: &[ClipInterval],
    threshold: f64,
) -> Result<f64> {
    Ok(scf1_counts(pred_tree, pred_clips, gold_tree, gold_clips, threshold)?.f1())
}
