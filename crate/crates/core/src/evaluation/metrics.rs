//! Classification and frame-level segmentation metrics.

use log::warn;
use serde::Serialize;

use crate::error::{CoreError, Result};

/// `counts[truth][pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Self> {
        check_lengths(truth, pred)?;
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= num_classes || p >= num_classes {
                return Err(CoreError::invalid(format!(
                    "label {} out of range for {num_classes} classes",
                    t.max(p)
                )));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub class: usize,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub acc: f64,
    pub bacc: f64,
    pub f1_macro: f64,
    pub precision_macro: f64,
    pub auc: Option<f64>,
    pub per_class: Vec<ClassStats>,
    pub confusion: ConfusionMatrix,
}

/// Accuracy, balanced accuracy, macro F1/precision and (with `scores`) macro
/// one-vs-rest AUC.
///
/// Macro averages run over the classes present in `truth`; a class never
/// predicted has precision 0.
pub fn classification_metrics(
    truth: &[usize],
    pred: &[usize],
    scores: Option<&[Vec<f64>]>,
    num_classes: usize,
) -> Result<ClassificationReport> {
    if truth.is_empty() {
        return Err(CoreError::invalid("no samples to evaluate"));
    }
    let cm = ConfusionMatrix::new(truth, pred, num_classes)?;
    let n = cm.total() as f64;
    let correct: u64 = (0..num_classes).map(|c| cm.counts[c][c]).sum();

    let mut per_class = Vec::new();
    for c in 0..num_classes {
        let support = cm.support(c);
        if support == 0 {
            warn!("class {c} absent from ground truth; excluded from macro averages");
            continue;
        }
        let tp = cm.counts[c][c] as f64;
        let predicted = cm.predicted(c) as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = tp / support as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassStats {
            class: c,
            support,
            precision,
            recall,
            f1,
        });
    }
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassStats) -> f64| per_class.iter().map(f).sum::<f64>() / k;

    let auc = match scores {
        Some(s) => macro_auc(truth, s, num_classes)?,
        None => None,
    };
    Ok(ClassificationReport {
        acc: correct as f64 / n,
        bacc: mean(|s| s.recall),
        f1_macro: mean(|s| s.f1),
        precision_macro: mean(|s| s.precision),
        auc,
        per_class,
        confusion: cm,
    })
}

/// Probability that a random positive outranks a random negative; ties count half.
pub fn binary_auc(positive: &[bool], score: &[f64]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..score.len()).collect();
    idx.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // midranks over tied groups
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && score[idx[j + 1]] == score[idx[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Unweighted mean of one-vs-rest AUCs over classes that have both positives
/// and negatives in `truth`.
pub fn macro_auc(truth: &[usize], scores: &[Vec<f64>], num_classes: usize) -> Result<Option<f64>> {
    if scores.len() != truth.len() || scores.iter().any(|r| r.len() != num_classes) {
        return Err(CoreError::invalid("one score per class and sample is required"));
    }
    let aucs: Vec<f64> = (0..num_classes)
        .filter_map(|c| {
            let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            binary_auc(&pos, &s)
        })
        .collect();
    Ok((!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64))
}

fn check_lengths(truth: &[usize], pred: &[usize]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(CoreError::invalid(format!(
            "length mismatch: {} ground-truth vs {} predicted labels",
            truth.len(),
            pred.len()
        )));
    }
    Ok(())
}

/// Mean over frames: fraction of frames whose labels agree.
pub fn mof(truth: &[usize], pred: &[usize]) -> Result<f64> {
    check_lengths(truth, pred)?;
    if truth.is_empty() {
        return Err(CoreError::invalid("mof of an empty sequence"));
    }
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Frame accuracy with every ground-truth class weighted equally
/// (the expectation of MoF over class-balanced frame resampling).
pub fn balanced_mof(truth: &[usize], pred: &[usize]) -> Result<f64> {
    check_lengths(truth, pred)?;
    let classes = present(truth);
    if classes.is_empty() {
        return Err(CoreError::invalid("balanced mof of an empty sequence"));
    }
    let recall = |c: usize| {
        let (mut hit, mut tot) = (0usize, 0usize);
        for (&t, &p) in truth.iter().zip(pred) {
            if t == c {
                tot += 1;
                hit += usize::from(p == c);
            }
        }
        hit as f64 / tot as f64
    };
    Ok(classes.iter().map(|&c| recall(c)).sum::<f64>() / classes.len() as f64)
}

fn present(labels: &[usize]) -> Vec<usize> {
    let set: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    set.into_iter().collect()
}

/// Per ground-truth class `|T ∩ P| / |T ∪ P|` over frame sets, averaged.
pub fn iou(truth: &[usize], pred: &[usize]) -> Result<f64> {
    iou_ignoring(truth, pred, None)
}

/// [`iou`] with frames labeled `ignore` (unannotated background) left out of
/// the class average; they still count toward unions.
pub fn iou_ignoring(truth: &[usize], pred: &[usize], ignore: Option<usize>) -> Result<f64> {
    check_lengths(truth, pred)?;
    let mut classes = present(truth);
    classes.retain(|&c| Some(c) != ignore);
    if classes.is_empty() {
        return Err(CoreError::invalid("iou needs at least one ground-truth event"));
    }
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&t, &p) in truth.iter().zip(pred) {
                let (a, b) = (t == c, p == c);
                inter += usize::from(a && b);
                union += usize::from(a || b);
            }
            inter as f64 / union as f64
        })
        .sum();
    Ok(total / classes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_prediction() {
        let t = vec![0, 1, 2, 1, 0];
        let scores: Vec<Vec<f64>> = t.iter().map(|&c| (0..3).map(|k| f64::from(u8::from(k == c))).collect()).collect();
        let r = classification_metrics(&t, &t, Some(&scores), 3).unwrap();
        assert_eq!((r.acc, r.bacc, r.f1_macro, r.precision_macro, r.auc), (1.0, 1.0, 1.0, 1.0, Some(1.0)));
    }

    #[test]
    fn constant_prediction_bacc() {
        let t = vec![0, 0, 1, 1];
        let r = classification_metrics(&t, &[1, 1, 1, 1], None, 2).unwrap();
        assert_eq!(r.bacc, 0.5);
        assert_eq!(r.per_class[0].precision, 0.0);
        assert_eq!(r.auc, None);
    }

    #[test]
    fn auc_ties_and_reversal() {
        let pos = [true, false, true, false];
        assert_eq!(binary_auc(&pos, &[0.3; 4]), Some(0.5));
        let s = [0.9, 0.2, 0.6, 0.4];
        assert_eq!(binary_auc(&pos, &s), Some(1.0));
        let rev: Vec<f64> = s.iter().map(|v| -v).collect();
        assert_eq!(binary_auc(&pos, &rev), Some(0.0));
        assert_eq!(binary_auc(&[true, true], &[0.1, 0.2]), None);
    }

    #[test]
    fn absent_class_excluded() {
        let r = classification_metrics(&[0, 0, 1], &[0, 2, 1], None, 3).unwrap();
        assert_eq!(r.per_class.len(), 2);
        assert_abs_diff_eq!(r.bacc, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn frame_metrics_hand_cases() {
        assert_eq!(mof(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert_eq!(mof(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!(mof(&[0], &[0, 1]).is_err());
        let truth: Vec<usize> = (0..15).map(|f| usize::from(f < 10)).collect();
        let pred: Vec<usize> = (0..15).map(|f| usize::from(f >= 5)).collect();
        // class 1 = frames [0,10) vs [5,15): 5/15; class 0 = [10,15) vs [0,5): 0
        assert_abs_diff_eq!(iou(&truth, &pred).unwrap(), (1.0 / 3.0) / 2.0, epsilon = 1e-15);
        assert!(iou(&[], &[]).is_err());
        const BG: usize = 9;
        let truth: Vec<usize> = (0..15).map(|f| if f < 10 { 0 } else { BG }).collect();
        let pred: Vec<usize> = (0..15).map(|f| if f >= 5 { 0 } else { BG }).collect();
        assert_abs_diff_eq!(iou_ignoring(&truth, &pred, Some(BG)).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn balanced_mof_weights_classes() {
        let t = [0, 0, 0, 1];
        let p = [0, 0, 0, 0];
        assert_eq!(mof(&t, &p).unwrap(), 0.75);
        assert_eq!(balanced_mof(&t, &p).unwrap(), 0.5);
    }
}
