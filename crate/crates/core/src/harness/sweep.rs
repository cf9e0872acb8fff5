use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, Dataset, HarnessError, MetricReports, RunConfig};
use crate::data::ClassPair;
use crate::model::{write_checkpoint, InputMode, NetworkConfig, REFERENCE_PAIRINGS};
use crate::seed::derive;

/// Input modes reported in the result tables.
pub const TABLE_MODES: [InputMode; 2] = [InputMode::SmriLr, InputMode::Fusion];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    pub classifier_pair: ClassPair,
    pub input_mode: InputMode,
    pub roi_size: usize,
    pub configuration: String,
    pub seed: u64,
    pub reports: Option<BTreeMap<String, MetricReports>>,
    pub error: Option<String>,
}

/// Directory-safe run name, e.g. `AD-NC_sMRI_L+sMRI_R_28_C1`.
pub fn run_name(config: &RunConfig) -> String {
    format!(
        "{}_{}_{}_{}",
        config.classifier_pair.label().replace('/', "-"),
        config.network.input_mode.label(),
        config.network.roi_size,
        config.network.name
    )
}

/// Every (mode, ROI size, preset) combination of the result tables for one
/// pair, with a per-run seed derived from the base seed and the run name.
/// Settings other than the architecture are copied from `base`.
pub fn reference_grid(base: &RunConfig, modes: &[InputMode]) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for &mode in modes {
        for (roi, preset) in REFERENCE_PAIRINGS {
            let mut c = base.clone();
            c.network = NetworkConfig {
                dropout_rate: base.network.dropout_rate,
                shared_weights: base.network.shared_weights,
                bn_epsilon: base.network.bn_epsilon,
                bn_momentum: base.network.bn_momentum,
                ..NetworkConfig::preset(preset, roi, mode)
            };
            c.seed = derive(base.seed, &run_name(&c));
            out.push(c);
        }
    }
    out
}

fn run_one(config: &RunConfig, dataset: &Dataset, out_dir: Option<&Path>) -> Result<BTreeMap<String, MetricReports>, HarnessError> {
    let outcome = train(config, dataset)?;
    let summary = match out_dir {
        Some(dir) => {
            let run_dir = dir.join(run_name(config));
            let summary = outcome.log.write(&run_dir)?;
            write_checkpoint(std::io::BufWriter::new(std::fs::File::create(run_dir.join("model.ckpt"))?), &outcome.network)?;
            summary
        }
        None => outcome.log.summary()?,
    };
    Ok(summary.reports)
}

/// Trains every config and collects its top-mean reports. Datasets are
/// requested once per ROI size. A failing run is recorded in its row.
/// Rows come back in grid order whatever the execution order.
pub fn sweep(
    grid: &[RunConfig],
    dataset_for: &(dyn Fn(usize) -> Result<Dataset, HarnessError> + Sync),
    out_dir: Option<&Path>,
    parallel: bool,
) -> Vec<SweepRow> {
    let mut by_roi: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in grid.iter().enumerate() {
        by_roi.entry(c.network.roi_size).or_default().push(i);
    }
    let mut results: Vec<Option<Result<BTreeMap<String, MetricReports>, String>>> = vec![None; grid.len()];
    for (roi, indices) in by_roi {
        match dataset_for(roi) {
            Err(e) => {
                for i in indices {
                    results[i] = Some(Err(format!("dataset for ROI {roi}: {e}")));
                }
            }
            Ok(dataset) => {
                let run = |&i: &usize| (i, run_one(&grid[i], &dataset, out_dir).map_err(|e| e.to_string()));
                let done: Vec<_> = if parallel {
                    indices.par_iter().map(run).collect()
                } else {
                    indices.iter().map(run).collect()
                };
                for (i, r) in done {
                    results[i] = Some(r);
                }
            }
        }
    }
    grid.iter()
        .zip(results)
        .map(|(c, r)| {
            let r = r.expect("every grid entry ran");
            SweepRow {
                run: run_name(c),
                classifier_pair: c.classifier_pair,
                input_mode: c.network.input_mode,
                roi_size: c.network.roi_size,
                configuration: c.network.name.clone(),
                seed: c.seed,
                error: r.as_ref().err().cloned(),
                reports: r.ok(),
            }
        })
        .collect()
}

/// One line per run: identifying columns, then value and interval
/// half-width for ACC, SEN and SPC on each test set.
pub fn sweep_table_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("classifier_pair,input_mode,roi_size,configuration");
    for set in ["test0", "test1", "test2"] {
        for m in ["acc", "sen", "spc"] {
            let _ = write!(out, ",{set}_{m},{set}_{m}_ci");
        }
    }
    out.push_str(",error\n");
    for r in rows {
        let _ = write!(out, "{},{},{},{}", r.classifier_pair, r.input_mode.label(), r.roi_size, r.configuration);
        for set in ["test0", "test1", "test2"] {
            let reports = r.reports.as_ref().and_then(|m| m.get(set));
            for m in 0..3 {
                let rep = reports.and_then(|x| [x.acc, x.sen, x.spc][m]);
                match rep {
                    Some(t) => {
                        let _ = write!(out, ",{},{}", t.value, (t.ci_high - t.ci_low) / 2.0);
                    }
                    None => out.push_str(",,"),
                }
            }
        }
        let _ = writeln!(out, ",{}", r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    #[test]
    fn reference_grid_has_sixteen_rows_per_pair() {
        let base = RunConfig::new(ClassPair::AdMci, NetworkConfig::preset(Preset::C1, 28, InputMode::SmriLr), 5);
        let grid = reference_grid(&base, &TABLE_MODES);
        assert_eq!(grid.len(), 16);
        let names: std::collections::BTreeSet<String> = grid.iter().map(run_name).collect();
        assert_eq!(names.len(), 16);
        assert!(grid.iter().all(|c| c.warnings().is_empty()));
        assert_eq!(run_name(&grid[0]), "AD-MCI_sMRI_L+sMRI_R_28_C1");
        let seeds: std::collections::BTreeSet<u64> = grid.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 16);
    }

    #[test]
    fn failed_dataset_is_recorded_per_row() {
        let base = RunConfig::new(ClassPair::AdNc, NetworkConfig::preset(Preset::C1, 28, InputMode::SmriLr), 1);
        let rows = sweep(
            std::slice::from_ref(&base),
            &|_| Err(HarnessError::Config("no data".into())),
            None,
            false,
        );
        assert_eq!(rows.len(), 1);
        assert!(rows[0].error.as_deref().unwrap().contains("no data"));
        let csv = sweep_table_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), csv.lines().next().unwrap().split(',').count());
    }
}
