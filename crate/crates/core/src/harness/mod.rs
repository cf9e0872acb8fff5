//! Experiment engine: the training loop, evaluation on the three test sets,
//! grid sweeps, and the run-log formats they produce.

mod dataset;
mod evaluate;
mod report;
mod runlog;
mod sweep;
mod train;

pub use dataset::{Dataset, DatasetSpec, Item};
pub use evaluate::{evaluate, evaluate_items, SetEvaluation};
pub use report::{curve_csvs, load_run, parse_runlog_csv, render_table, CurvePoint, ReportError, ReportRow, RunReport, CURVES};
pub use runlog::{LogRecord, MetricReports, RunLog, RunSummary, TopMeanReport, CSV_HEADER};
pub use sweep::{reference_grid, run_name, sweep, sweep_table_csv, SweepRow, TABLE_MODES};
pub use train::{train, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ClassPair, DataError};
use crate::metrics::{IntervalKind, MetricsError, DEFAULT_THETA};
use crate::model::{ModelError, NetworkConfig, Preset, REFERENCE_PAIRINGS};
use crate::optim::{OptimConfig, OptimError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Interval settings for the summary reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntervalConfig {
    pub theta: f64,
    pub kind: IntervalKind,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        IntervalConfig {
            theta: DEFAULT_THETA,
            kind: IntervalKind::Normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub classifier_pair: ClassPair,
    pub network: NetworkConfig,
    #[serde(default)]
    pub optimizer: OptimConfig,
    #[serde(default = "defaults::iterations")]
    pub iterations: u64,
    /// Samples per optimizer step.
    #[serde(default = "defaults::q")]
    pub q: usize,
    /// Samples per forward/backward pass; gradients of all mini-groups of
    /// an iteration are averaged before the step.
    #[serde(default = "defaults::mini_group_size")]
    pub mini_group_size: usize,
    /// Iterations between redraws of the fit/validation partition.
    #[serde(default = "defaults::resplit_period")]
    pub resplit_period: u64,
    /// Iterations between evaluation points.
    #[serde(default = "defaults::eval_period")]
    pub eval_period: u64,
    #[serde(default = "defaults::validation_fraction")]
    pub validation_fraction: f64,
    /// Top-mean window length in iterations; converted to evaluation points.
    #[serde(default = "defaults::top_mean_window")]
    pub top_mean_window: u64,
    #[serde(default)]
    pub interval: IntervalConfig,
    /// Samples per inference batch during evaluation.
    #[serde(default = "defaults::eval_batch")]
    pub eval_batch: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn iterations() -> u64 {
        1000
    }
    pub fn q() -> usize {
        90
    }
    pub fn mini_group_size() -> usize {
        10
    }
    pub fn resplit_period() -> u64 {
        100
    }
    pub fn eval_period() -> u64 {
        10
    }
    pub fn validation_fraction() -> f64 {
        0.1
    }
    pub fn top_mean_window() -> u64 {
        100
    }
    pub fn eval_batch() -> usize {
        16
    }
}

impl RunConfig {
    pub fn new(classifier_pair: ClassPair, network: NetworkConfig, seed: u64) -> Self {
        RunConfig {
            classifier_pair,
            network,
            optimizer: OptimConfig::default(),
            iterations: defaults::iterations(),
            q: defaults::q(),
            mini_group_size: defaults::mini_group_size(),
            resplit_period: defaults::resplit_period(),
            eval_period: defaults::eval_period(),
            validation_fraction: defaults::validation_fraction(),
            top_mean_window: defaults::top_mean_window(),
            interval: IntervalConfig::default(),
            eval_batch: defaults::eval_batch(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.network.validate()?;
        self.optimizer.validate()?;
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.network.num_classes != 2 {
            return bad(format!("a classifier pair needs num_classes = 2, got {}", self.network.num_classes));
        }
        if self.q < 2 {
            return bad(format!("q = {} leaves a class without samples", self.q));
        }
        if self.mini_group_size < 2 {
            return bad("mini_group_size must be at least 2 for batch normalization".into());
        }
        if self.q % self.mini_group_size == 1 {
            return bad(format!(
                "q = {} splits into mini-groups of {} with a single-sample remainder",
                self.q, self.mini_group_size
            ));
        }
        if self.resplit_period == 0 || self.eval_period == 0 || self.top_mean_window == 0 || self.eval_batch == 0 {
            return bad("resplit_period, eval_period, top_mean_window and eval_batch must be positive".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!("validation_fraction {} not in (0, 1)", self.validation_fraction));
        }
        if !(self.interval.theta > 0.0) {
            return bad(format!("interval.theta {} must be positive", self.interval.theta));
        }
        Ok(())
    }

    /// Non-fatal remarks, such as an ROI size the architecture was not paired with.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.network.name.parse::<Preset>() {
            Ok(p) => {
                let roi = self.network.roi_size;
                if !REFERENCE_PAIRINGS.contains(&(roi, p)) {
                    out.push(format!(
                        "ROI size {roi} is not a reference pairing for {} (expected one of {:?})",
                        p.name(),
                        p.paired_roi_sizes()
                    ));
                }
            }
            Err(_) => out.push(format!("network {:?} is not a reference preset", self.network.name)),
        }
        out
    }

    /// Number of evaluation points in the top-mean window.
    pub fn window_points(&self) -> usize {
        ((self.top_mean_window as f64 / self.eval_period as f64).round() as usize).max(1)
    }

    /// Iterations at which the five curves are evaluated: 0, every
    /// `eval_period`, and the final iteration.
    pub fn eval_points(&self) -> Vec<u64> {
        let mut pts: Vec<u64> = (0..=self.iterations).step_by(self.eval_period as usize).collect();
        if pts.last() != Some(&self.iterations) {
            pts.push(self.iterations);
        }
        pts
    }
}
