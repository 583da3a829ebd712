//! Localization error summaries.

/// Quantile by linear interpolation between order statistics of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Five-number summary after Tukey 1.5 IQR trimming; `n` counts the kept values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

/// `None` when nothing remains to summarize.
pub fn localization_summary(errors: &[f64]) -> Option<LocSummary> {
    let mut sorted: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
    if sorted.is_empty() {
        return None;
    }
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let kept: Vec<f64> = sorted.into_iter().filter(|&e| e >= lo && e <= hi).collect();
    if kept.is_empty() {
        return None;
    }
    Some(LocSummary {
        min: kept[0],
        q1: quantile(&kept, 0.25),
        median: quantile(&kept, 0.5),
        q3: quantile(&kept, 0.75),
        max: kept[kept.len() - 1],
        n: kept.len(),
    })
}
