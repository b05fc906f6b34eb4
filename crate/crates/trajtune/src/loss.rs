//! Training-loss curve aggregation and convergence analysis.
//!
//! Raw logs carry one loss value per (step, label) observation, where the
//! label names a capability bucket or data channel. Aggregation averages
//! duplicate observations per step, applies a centered moving average, and
//! ranks labels by how quickly the smoothed curve drops under a threshold.
//! A dedicated report flags the characteristic gap between format-style
//! losses (which collapse quickly) and content-style losses (which
//! plateau well above them).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One logged observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub label: String,
    pub loss: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("record {index}: loss must be finite, got {value}")]
    NonFinite { index: usize, value: f64 },
    #[error("smoothing window must be at least 1")]
    BadWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
}

/// Per-label smoothed curve, sorted by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub label: String,
    pub window: usize,
    pub points: Vec<LossPoint>,
}

/// Averages duplicate observations per (label, step) and smooths each
/// curve with a centered moving average. Point `j` averages the raw means
/// in `[j - (window-1)/2, j + window/2]`, clamped to the curve, so
/// `window = 1` returns the raw means unchanged. Curves come back in
/// label order.
pub fn aggregate_curves(
    records: &[LossRecord],
    window: usize,
) -> Result<Vec<LossCurve>, LossError> {
    if window == 0 {
        return Err(LossError::BadWindow);
    }
    let mut sums: BTreeMap<&str, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for (index, record) in records.iter().enumerate() {
        if !record.loss.is_finite() {
            return Err(LossError::NonFinite {
                index,
                value: record.loss,
            });
        }
        let slot = sums
            .entry(&record.label)
            .or_default()
            .entry(record.step)
            .or_insert((0.0, 0));
        slot.0 += record.loss;
        slot.1 += 1;
    }
    let half_left = (window - 1) / 2;
    let half_right = window / 2;
    let mut curves = Vec::with_capacity(sums.len());
    for (label, by_step) in sums {
        let steps: Vec<u64> = by_step.keys().copied().collect();
        let means: Vec<f64> = by_step.values().map(|(sum, n)| sum / *n as f64).collect();
        let points = steps
            .iter()
            .enumerate()
            .map(|(j, &step)| {
                let lo = j.saturating_sub(half_left);
                let hi = (j + half_right).min(means.len() - 1);
                let span = &means[lo..=hi];
                LossPoint {
                    step,
                    loss: span.iter().sum::<f64>() / span.len() as f64,
                }
            })
            .collect();
        curves.push(LossCurve {
            label: label.to_string(),
            window,
            points,
        });
    }
    Ok(curves)
}

/// Convergence standing for one label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub label: String,
    /// First step whose smoothed loss drops under the threshold; `None`
    /// when the curve never gets there.
    pub steps_to_threshold: Option<u64>,
}

/// Ranks curves by time-to-threshold, fastest first. Curves that never
/// converge sort last; ties break on label order, so the ranking is
/// stable across runs.
pub fn convergence_summary(curves: &[LossCurve], threshold: f64) -> Vec<ConvergenceEntry> {
    let mut entries: Vec<ConvergenceEntry> = curves
        .iter()
        .map(|curve| ConvergenceEntry {
            label: curve.label.clone(),
            steps_to_threshold: curve
                .points
                .iter()
                .find(|p| p.loss < threshold)
                .map(|p| p.step),
        })
        .collect();
    entries.sort_by(|a, b| {
        let ka = (a.steps_to_threshold.is_none(), a.steps_to_threshold);
        let kb = (b.steps_to_threshold.is_none(), b.steps_to_threshold);
        ka.cmp(&kb).then_with(|| a.label.cmp(&b.label))
    });
    entries
}

/// Tail comparison between a format-style curve and a content-style curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub format_label: String,
    pub content_label: String,
    /// Mean smoothed loss over each curve's final window.
    pub format_tail: f64,
    pub content_tail: f64,
    /// content_tail / format_tail.
    pub ratio: f64,
    /// Set when the content tail sits at least `ratio_threshold` times
    /// above the format tail.
    pub flagged: bool,
}

/// Compares curve tails (the mean of each curve's last `window` smoothed
/// points) and flags a format/content gap when the ratio reaches
/// `ratio_threshold`. Returns `None` when either label is missing or has
/// an empty curve.
pub fn format_content_gap(
    curves: &[LossCurve],
    format_label: &str,
    content_label: &str,
    ratio_threshold: f64,
) -> Option<GapReport> {
    let tail = |label: &str| -> Option<f64> {
        let curve = curves.iter().find(|c| c.label == label)?;
        if curve.points.is_empty() {
            return None;
        }
        let take = curve.window.min(curve.points.len());
        let span = &curve.points[curve.points.len() - take..];
        Some(span.iter().map(|p| p.loss).sum::<f64>() / take as f64)
    };
    let format_tail = tail(format_label)?;
    let content_tail = tail(content_label)?;
    let ratio = if format_tail == 0.0 {
        f64::INFINITY
    } else {
        content_tail / format_tail
    };
    Some(GapReport {
        format_label: format_label.to_string(),
        content_label: content_label.to_string(),
        format_tail,
        content_tail,
        ratio,
        flagged: ratio >= ratio_threshold,
    })
}
