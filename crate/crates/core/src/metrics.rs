//! Binary classification metrics, smoothed summaries of validation curves and
//! confidence intervals for accuracies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{predictions} predictions for {truths} labels")]
    Length { predictions: usize, truths: usize },
    #[error("window {window} longer than series of {len} values")]
    Window { window: usize, len: usize },
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("sample size must be positive")]
    ZeroSamples,
}

/// Counts with respect to a designated positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(predictions: &[usize], truths: &[usize], positive: usize) -> Result<Self, MetricsError> {
        if predictions.len() != truths.len() {
            return Err(MetricsError::Length {
                predictions: predictions.len(),
                truths: truths.len(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &t) in predictions.iter().zip(truths) {
            match (p == positive, t == positive) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Accuracy, sensitivity and specificity; `None` where a denominator is zero.
    pub fn rates(&self) -> Rates {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        Rates {
            accuracy: ratio(self.tp + self.tn, self.total()),
            sensitivity: ratio(self.tp, self.tp + self.fn_),
            specificity: ratio(self.tn, self.tn + self.fp),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

/// Best mean over contiguous windows of `window` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopMean {
    pub value: f64,
    /// Population variance of the values inside the winning window.
    pub variance: f64,
    /// First index of the winning window; the earliest on ties.
    pub start: usize,
}

/// Slides a window of `window` values with stride 1 and keeps the maximum mean.
pub fn top_mean(series: &[f64], window: usize) -> Result<TopMean, MetricsError> {
    if window == 0 {
        return Err(MetricsError::ZeroWindow);
    }
    if window > series.len() {
        return Err(MetricsError::Window {
            window,
            len: series.len(),
        });
    }
    // Means are recomputed per window rather than with a running sum so equal
    // windows compare bit-for-bit equal and the earliest wins.
    let mean_at = |s: usize| series[s..s + window].iter().sum::<f64>() / window as f64;
    let mut start = 0;
    let mut best = mean_at(0);
    for s in 1..=series.len() - window {
        let m = mean_at(s);
        if m > best {
            best = m;
            start = s;
        }
    }
    let w = &series[start..start + window];
    let variance = w.iter().map(|x| (x - best) * (x - best)).sum::<f64>() / window as f64;
    Ok(TopMean {
        value: best,
        variance,
        start,
    })
}

/// Interval construction for a proportion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// `val ± theta * sqrt(val (1 - val) / n)`, clamped to [0, 1].
    #[default]
    Normal,
    /// Wilson score interval.
    Wilson,
}

pub const DEFAULT_THETA: f64 = 1.96;

/// `(low, high)` for an observed proportion `value` over `n` trials.
pub fn confidence_interval(value: f64, n: usize, theta: f64, kind: IntervalKind) -> Result<(f64, f64), MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroSamples);
    }
    let nf = n as f64;
    let (low, high) = match kind {
        IntervalKind::Normal => {
            let half = theta * (value * (1.0 - value) / nf).sqrt();
            (value - half, value + half)
        }
        IntervalKind::Wilson => {
            let z2 = theta * theta;
            let denom = 1.0 + z2 / nf;
            let center = (value + z2 / (2.0 * nf)) / denom;
            let half = theta * (value * (1.0 - value) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
            (center - half, center + half)
        }
    };
    Ok((low.max(0.0), high.min(1.0)))
}

/// Interval with the default construction and `theta = 1.96`.
pub fn wilson_ci(value: f64, n: usize) -> Result<(f64, f64), MetricsError> {
    confidence_interval(value, n, DEFAULT_THETA, IntervalKind::Normal)
}
