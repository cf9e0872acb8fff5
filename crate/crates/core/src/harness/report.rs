use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::runlog::SETS;
use super::{run_name, RunSummary, TopMeanReport, CSV_HEADER};
use crate::data::ClassPair;
use crate::model::InputMode;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{file}:{line}: {message}")]
    Malformed { file: String, line: usize, message: String },
    #[error("no evaluations recorded in {0}")]
    NoEvaluations(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

/// One row of a run log CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: u64,
    pub lr: f64,
    pub train_loss: f64,
    /// Validation, then test sets 0, 1 and 2.
    pub accuracy: [f64; 4],
}

/// Curve names in the order of the run log columns after `lr`.
pub const CURVES: [&str; 5] = ["train_loss", "val_acc", "test0_acc", "test1_acc", "test2_acc"];

/// Parses a run log CSV; `file` labels error messages.
pub fn parse_runlog_csv(file: &str, text: &str) -> Result<Vec<CurvePoint>, ReportError> {
    let malformed = |line: usize, message: String| ReportError::Malformed {
        file: file.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        Some((_, h)) => return Err(malformed(1, format!("expected header {CSV_HEADER:?}, found {h:?}"))),
        None => return Err(malformed(1, "empty file".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(malformed(n, format!("expected 7 fields, found {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64, ReportError> {
            fields[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| malformed(n, format!("field {}: {e}", k + 1)))
        };
        let iteration = fields[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| malformed(n, format!("iteration: {e}")))?;
        if out.last().is_some_and(|p: &CurvePoint| p.iteration >= iteration) {
            return Err(malformed(n, format!("iteration {iteration} is not increasing")));
        }
        out.push(CurvePoint {
            iteration,
            lr: num(1)?,
            train_loss: num(2)?,
            accuracy: [num(3)?, num(4)?, num(5)?, num(6)?],
        });
    }
    Ok(out)
}

/// One CSV per curve with columns `iteration,value`, keyed by curve name.
pub fn curve_csvs(points: &[CurvePoint]) -> Vec<(&'static str, String)> {
    CURVES
        .iter()
        .enumerate()
        .map(|(c, &name)| {
            let mut out = String::from("iteration,value\n");
            for p in points {
                let v = if c == 0 { p.train_loss } else { p.accuracy[c - 1] };
                let _ = writeln!(out, "{},{}", p.iteration, v);
            }
            (name, out)
        })
        .collect()
}

/// Table row of one completed run: ACC, SEN and SPC on test sets 0, 1 and 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub classifier_pair: ClassPair,
    pub input_mode: InputMode,
    pub roi_size: usize,
    pub configuration: String,
    /// Indexed by test set, then metric (ACC, SEN, SPC).
    pub cells: [[Option<TopMeanReport>; 3]; 3],
}

impl ReportRow {
    pub fn from_summary(summary: &RunSummary) -> Result<Self, ReportError> {
        let run = run_name(&summary.config);
        if summary.evaluations == 0 || summary.reports.is_empty() {
            return Err(ReportError::NoEvaluations(run));
        }
        let mut cells = [[None; 3]; 3];
        for (t, set) in SETS[1..].iter().enumerate() {
            if let Some(r) = summary.reports.get(*set) {
                cells[t] = [r.acc, r.sen, r.spc];
            }
        }
        let n = &summary.config.network;
        Ok(ReportRow {
            run,
            classifier_pair: summary.config.classifier_pair,
            input_mode: n.input_mode,
            roi_size: n.roi_size,
            configuration: n.name.clone(),
            cells,
        })
    }
}

/// `value ± half-width` to three decimals, or `n/a` for an undefined metric.
fn cell(r: &Option<TopMeanReport>) -> String {
    match r {
        Some(r) => format!("{:.3} ± {:.3}", r.value, (r.ci_high - r.ci_low) / 2.0),
        None => "n/a".into(),
    }
}

/// Aligned text table: one row per run, columns ACC/SEN/SPC for each test set.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut header = vec!["pair".to_string(), "data".into(), "ROI".into(), "config".into()];
    for t in 0..3 {
        for m in ["ACC", "SEN", "SPC"] {
            header.push(format!("test{t} {m}"));
        }
    }
    let mut table = vec![header];
    for r in rows {
        let mut line = vec![
            r.classifier_pair.to_string(),
            r.input_mode.label().to_string(),
            r.roi_size.to_string(),
            r.configuration.clone(),
        ];
        line.extend(r.cells.iter().flatten().map(cell));
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in &table {
        let padded: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Loaded outputs of one run directory.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub row: ReportRow,
    pub curve: Vec<CurvePoint>,
}

/// Reads `summary.json` and `runlog.csv` from a run directory.
pub fn load_run(dir: &Path) -> Result<RunReport, ReportError> {
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|source| ReportError::Io { path, source })
    };
    let csv_path = dir.join("runlog.csv");
    let curve = parse_runlog_csv(&csv_path.display().to_string(), &read("runlog.csv")?)?;
    if curve.is_empty() {
        return Err(ReportError::NoEvaluations(dir.display().to_string()));
    }
    let summary_path = dir.join("summary.json");
    let summary: RunSummary = serde_json::from_str(&read("summary.json")?).map_err(|source| ReportError::Json {
        path: summary_path,
        source,
    })?;
    Ok(RunReport {
        row: ReportRow::from_summary(&summary)?,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{LogRecord, RunConfig, RunLog};
    use crate::metrics::Confusion;
    use crate::model::{NetworkConfig, Preset};

    fn log(n: usize) -> RunLog {
        let mut config = RunConfig::new(ClassPair::AdNc, NetworkConfig::preset(Preset::C1, 28, InputMode::SmriLr), 3);
        config.top_mean_window = 20;
        let records = (0..n)
            .map(|i| LogRecord {
                iteration: 10 * i as u64,
                lr: 0.01,
                train_loss: if i == 0 { f64::NAN } else { 0.2 },
                confusions: [Confusion {
                    tp: 6 + i,
                    tn: 6,
                    fp: 6 - i,
                    fn_: 6,
                }; 4],
            })
            .collect();
        RunLog {
            config,
            num_params: 3,
            records,
        }
    }

    #[test]
    fn csv_round_trip() {
        let l = log(3);
        let pts = parse_runlog_csv("x", &l.to_csv()).unwrap();
        assert_eq!(pts.len(), 3);
        assert!(pts[0].train_loss.is_nan());
        assert_eq!(pts[2].accuracy[1], 14.0 / 24.0);
        let curves = curve_csvs(&pts);
        assert_eq!(curves.len(), 5);
        assert_eq!(curves[2].1.lines().nth(1), Some("0,0.5"));
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let text = format!("{CSV_HEADER}\n0,0.01,NaN,0.5,0.5,0.5,0.5\n10,0.01,0.2,abc,0.5,0.5,0.5\n");
        let err = parse_runlog_csv("run.csv", &text).unwrap_err().to_string();
        assert!(err.starts_with("run.csv:3:"), "{err}");
        let err = parse_runlog_csv("run.csv", "a,b\n").unwrap_err().to_string();
        assert!(err.starts_with("run.csv:1:"), "{err}");
    }

    #[test]
    fn single_run_has_nine_cells() {
        let row = ReportRow::from_summary(&log(4).summary().unwrap()).unwrap();
        let table = render_table(std::slice::from_ref(&row));
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].matches('±').count(), 9);
        assert_eq!(table, render_table(&[row]));
    }

    #[test]
    fn empty_log_is_reported() {
        let err = ReportRow::from_summary(&log(0).summary().unwrap()).unwrap_err();
        assert!(matches!(err, ReportError::NoEvaluations(_)));
        assert!(err.to_string().contains("no evaluations recorded"));
    }
}
