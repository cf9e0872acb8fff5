use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, RunConfig};
use crate::metrics::{confidence_interval, top_mean, Confusion};
use crate::seed::SubSeeds;

pub const CSV_HEADER: &str = "iteration,lr,train_loss,val_acc,test0_acc,test1_acc,test2_acc";

/// Names of the evaluated sets, in log column order.
pub const SETS: [&str; 4] = ["validation", "test0", "test1", "test2"];

/// One evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: u64,
    pub lr: f64,
    /// Mean loss of the steps since the previous evaluation point; NaN at iteration 0.
    pub train_loss: f64,
    /// Validation, then test sets 0, 1 and 2.
    pub confusions: [Confusion; 4],
}

impl LogRecord {
    fn accuracy(&self, set: usize) -> f64 {
        self.confusions[set].rates().accuracy.unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopMeanReport {
    pub value: f64,
    pub variance: f64,
    /// Iteration of the first evaluation point in the winning window.
    pub window_start: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReports {
    pub acc: Option<TopMeanReport>,
    pub sen: Option<TopMeanReport>,
    pub spc: Option<TopMeanReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub seeds: SubSeeds,
    pub num_params: usize,
    pub evaluations: usize,
    pub window_points: usize,
    pub set_sizes: BTreeMap<String, usize>,
    /// Top-mean reports keyed by set name; absent when nothing was evaluated.
    pub reports: BTreeMap<String, MetricReports>,
    pub warnings: Vec<String>,
}

/// Evaluation records of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub config: RunConfig,
    pub num_params: usize,
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iteration,
                r.lr,
                r.train_loss,
                r.accuracy(0),
                r.accuracy(1),
                r.accuracy(2),
                r.accuracy(3)
            );
        }
        out
    }

    fn report(&self, set: usize, metric: impl Fn(&Confusion) -> Option<f64>) -> Result<Option<TopMeanReport>, HarnessError> {
        let series: Option<Vec<f64>> = self.records.iter().map(|r| metric(&r.confusions[set])).collect();
        let Some(series) = series else { return Ok(None) };
        if series.is_empty() {
            return Ok(None);
        }
        let window = self.config.window_points().min(series.len());
        let t = top_mean(&series, window)?;
        let n = self.records[0].confusions[set].total();
        let iv = &self.config.interval;
        let (ci_low, ci_high) = confidence_interval(t.value, n, iv.theta, iv.kind)?;
        Ok(Some(TopMeanReport {
            value: t.value,
            variance: t.variance,
            window_start: self.records[t.start].iteration,
            ci_low,
            ci_high,
        }))
    }

    pub fn summary(&self) -> Result<RunSummary, HarnessError> {
        let mut reports = BTreeMap::new();
        let mut set_sizes = BTreeMap::new();
        for (i, name) in SETS.iter().enumerate() {
            if let Some(first) = self.records.first() {
                set_sizes.insert(name.to_string(), first.confusions[i].total());
            }
            let acc = self.report(i, |c| c.rates().accuracy)?;
            if acc.is_none() && self.records.is_empty() {
                continue;
            }
            reports.insert(
                name.to_string(),
                MetricReports {
                    acc,
                    sen: self.report(i, |c| c.rates().sensitivity)?,
                    spc: self.report(i, |c| c.rates().specificity)?,
                },
            );
        }
        Ok(RunSummary {
            config: self.config.clone(),
            seeds: SubSeeds::from_master(self.config.seed),
            num_params: self.num_params,
            evaluations: self.records.len(),
            window_points: self.config.window_points(),
            set_sizes,
            reports,
            warnings: self.config.warnings(),
        })
    }

    /// Writes `runlog.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<RunSummary, HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("runlog.csv"), self.to_csv())?;
        let summary = self.summary()?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        Ok(summary)
    }
}
