//! Empirical ROC curves and detection probability at a fixed false positive rate.

use crate::error::{Error, Result};

/// One operating point: alarm when `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Points ordered by decreasing threshold, from `(+inf, 0, 0)` to the lowest
/// observed score at `(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn auc(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }
}

/// Positives `h1`, negatives `h0`. Equal scores share one threshold.
pub fn compute_roc(h1: &[f64], h0: &[f64]) -> Result<RocCurve> {
    if h1.is_empty() || h0.is_empty() {
        return Err(Error::data("ROC needs at least one positive and one negative score"));
    }
    if h1.iter().chain(h0).any(|s| s.is_nan()) {
        return Err(Error::data("ROC scores contain NaN"));
    }
    let mut scored: Vec<(f64, bool)> = h1
        .iter()
        .map(|&s| (s, true))
        .chain(h0.iter().map(|&s| (s, false)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n_pos, n_neg) = (h1.len(), h0.len());
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(RocCurve {
        points,
        n_pos,
        n_neg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdAtFpr {
    pub pd: f64,
    pub threshold: f64,
    pub fpr: f64,
    /// Fewer than `1 / fpr_target` negatives: only zero-false-alarm
    /// thresholds qualify.
    pub undersampled: bool,
}

/// Highest detection rate among operating points with `fpr <= fpr_target`,
/// i.e. the lowest such threshold.
pub fn pd_at_fpr(roc: &RocCurve, fpr_target: f64) -> PdAtFpr {
    let best = roc
        .points
        .iter()
        .take_while(|p| p.fpr <= fpr_target)
        .last()
        .copied()
        .unwrap_or(roc.points[0]);
    PdAtFpr {
        pd: best.tpr,
        threshold: best.threshold,
        fpr: best.fpr,
        undersampled: (roc.n_neg as f64) < (1.0 / fpr_target).ceil(),
    }
}
