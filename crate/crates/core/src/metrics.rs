//! I-AUROC, precision/recall/F1 and trial aggregation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Label;
use crate::math::{mean, std_dev};
use crate::{Error, Result};

/// Mann-Whitney AUROC: the fraction of (anomalous, nominal) pairs where the
/// anomaly scores higher, ties counting one half. `O(n log n)` via sorting.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite { context: "auroc scores" });
    }
    let n_pos = labels.iter().filter(|l| l.is_anomalous()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks of the positives, in doubled units to stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank2 = (i + 1 + j + 1) as u128;
        let pos = order[i..=j].iter().filter(|&&k| labels[k].is_anomalous()).count() as u128;
        rank_sum2 += midrank2 * pos;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Zero-denominator notes; the affected metric is reported as 0.
    pub diagnostics: Vec<String>,
}

/// Precision, recall and F1 of `flags` (true = predicted anomalous).
pub fn prf1(flags: &[bool], labels: &[Label]) -> Result<Prf1> {
    if flags.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: flags.len(),
            right: labels.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&f, l) in flags.iter().zip(labels) {
        match (f, l.is_anomalous()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let mut diagnostics = Vec::new();
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        diagnostics.push("no positive predictions; precision set to 0".into());
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        diagnostics.push("no anomalous samples; recall set to 0".into());
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        diagnostics.push("precision + recall = 0; F1 set to 0".into());
        0.0
    };
    Ok(Prf1 {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialMetrics {
    pub auroc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Mean and sample standard deviation of each metric over trials.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub trials: usize,
    pub mean: TrialMetrics,
    pub std: TrialMetrics,
}

pub fn aggregate(trials: &[TrialMetrics]) -> Aggregate {
    let col = |f: fn(&TrialMetrics) -> f64| trials.iter().map(f).collect::<Vec<_>>();
    let (a, p, r, f) = (col(|t| t.auroc), col(|t| t.precision), col(|t| t.recall), col(|t| t.f1));
    Aggregate {
        trials: trials.len(),
        mean: TrialMetrics {
            auroc: mean(&a),
            precision: mean(&p),
            recall: mean(&r),
            f1: mean(&f),
        },
        std: TrialMetrics {
            auroc: std_dev(&a),
            precision: std_dev(&p),
            recall: std_dev(&r),
            f1: std_dev(&f),
        },
    }
}
