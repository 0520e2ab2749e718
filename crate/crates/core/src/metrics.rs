//! Range-based event F1, step-rule AUC-PR and best-F1 threshold search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximal runs of ones as inclusive `(start, end)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSet {
    pub intervals: Vec<(usize, usize)>,
}

impl EventSet {
    pub fn from_binary(v: &[u8]) -> Self {
        let mut intervals = Vec::new();
        let mut open: Option<usize> = None;
        for (i, &x) in v.iter().enumerate() {
            match (x != 0, open) {
                (true, None) => open = Some(i),
                (false, Some(s)) => {
                    intervals.push((s, i - 1));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            intervals.push((s, v.len() - 1));
        }
        Self { intervals }
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventScore {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn any_one(v: &[u8], (s, e): (usize, usize)) -> bool {
    v[s..=e].iter().any(|&x| x != 0)
}

/// Range-based F1: event-level recall with timestep-level precision.
///
/// A true event counts as detected if any predicted one falls inside it
/// (one hit per event however many predictions land in it). Precision is the
/// fraction of predicted timesteps that fall inside true events, so a
/// prediction that flags everything cannot score a perfect precision. Both
/// sides empty scores 1, exactly one side empty scores 0.
pub fn event_f1(pred: &[u8], truth: &[u8]) -> Result<EventScore> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let true_events = EventSet::from_binary(truth);
    let pred_events = EventSet::from_binary(pred);
    match (true_events.is_empty(), pred_events.is_empty()) {
        (true, true) => {
            return Ok(EventScore {
                f1: 1.0,
                precision: 1.0,
                recall: 1.0,
            })
        }
        (true, false) | (false, true) => {
            return Ok(EventScore {
                f1: 0.0,
                precision: 0.0,
                recall: 0.0,
            })
        }
        _ => {}
    }
    let hits = true_events.intervals.iter().filter(|&&ev| any_one(pred, ev)).count();
    let flagged = pred.iter().filter(|&&p| p != 0).count();
    let correct = pred.iter().zip(truth).filter(|(&p, &t)| p != 0 && t != 0).count();
    let recall = hits as f64 / true_events.len() as f64;
    let precision = correct as f64 / flagged as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(EventScore { f1, precision, recall })
}

/// Area under the pointwise precision-recall curve, step rule
/// `sum (R_k - R_{k-1}) * P_k` over distinct thresholds in descending order.
pub fn auc_pr(scores: &[f64], truth: &[u8]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: scores.len(),
        });
    }
    let positives = truth.iter().filter(|&&t| t != 0).count();
    if positives == 0 {
        return Err(Error::invalid("AUC-PR needs at least one positive label"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut area = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        // consume every sample tied at this threshold
        let thr = scores[order[i]];
        while i < order.len() && scores[order[i]] == thr {
            if truth[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// `auc_pr` that maps the no-positive case to 0.
pub fn auc_pr_or_zero(scores: &[f64], truth: &[u8]) -> f64 {
    auc_pr(scores, truth).unwrap_or(0.0)
}

/// Sweeps every distinct score as a threshold (`score >= t` predicts 1) and
/// returns the threshold with the highest event F1; ties go to the smaller
/// threshold.
pub fn best_f1_threshold(scores: &[f64], truth: &[u8]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::invalid("threshold search on empty input"));
    }
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: scores.len(),
        });
    }
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut pred = vec![0u8; scores.len()];
    let mut best = (candidates[0], f64::NEG_INFINITY);
    for &thr in &candidates {
        for (p, &s) in pred.iter_mut().zip(scores) {
            *p = u8::from(s >= thr);
        }
        let f1 = event_f1(&pred, truth)?.f1;
        // ascending sweep: strict improvement keeps the smaller threshold on ties
        if f1 > best.1 {
            best = (thr, f1);
        }
    }
    Ok(best)
}

pub fn binarize(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= threshold)).collect()
}
