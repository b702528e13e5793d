//! Machine-readable outputs: the metrics CSV, per-sample
//! misclassification/uncertainty rows, multi-run summary tables, and the run
//! manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{CycleRecord, ExperimentReport, TestRow};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("runs disagree on cycle count: {0} vs {1}")]
    MismatchedCycles(usize, usize),
    #[error("no runs to summarize")]
    NoRuns,
    #[error("empty test set")]
    EmptyTestSet,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle: u32,
    pub strategy: String,
    pub seed: u64,
    pub test_accuracy: f64,
    pub labeled_count: usize,
    pub mean_u_misclassified: Option<f64>,
    pub mean_u_correct: Option<f64>,
    pub cv_param_diff: Option<f64>,
}

impl CycleMetrics {
    pub fn from_record(rec: &CycleRecord, strategy: &str, seed: u64) -> Self {
        Self {
            cycle: rec.cycle,
            strategy: strategy.to_string(),
            seed,
            test_accuracy: rec.test_accuracy,
            labeled_count: rec.labeled_count,
            mean_u_misclassified: rec.mean_u_misclassified,
            mean_u_correct: rec.mean_u_correct,
            cv_param_diff: rec.cv_param_diff,
        }
    }
}

/// Flatten a set of runs into metric rows.
pub fn metrics_from_reports(reports: &[ExperimentReport]) -> Vec<CycleMetrics> {
    reports
        .iter()
        .flat_map(|r| {
            r.cycles
                .iter()
                .map(|c| CycleMetrics::from_record(c, &r.strategy, r.seed))
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub const METRICS_HEADER: &str =
    "cycle,strategy,seed,test_accuracy,labeled_count,mean_u_misclassified,mean_u_correct,cv_param_diff";

/// Serialize metric rows: fixed header, 6 decimal places, LF endings, rows
/// ordered by (strategy, seed, cycle) so re-emits are byte-identical.
pub fn render_metrics_csv(metrics: &[CycleMetrics]) -> String {
    let mut rows = metrics.to_vec();
    rows.sort_by(|a, b| {
        a.strategy
            .cmp(&b.strategy)
            .then(a.seed.cmp(&b.seed))
            .then(a.cycle.cmp(&b.cycle))
    });
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in &rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{},{},{},{}\n",
            m.cycle,
            m.strategy,
            m.seed,
            m.test_accuracy,
            m.labeled_count,
            fmt_opt(m.mean_u_misclassified),
            fmt_opt(m.mean_u_correct),
            fmt_opt(m.cv_param_diff),
        ));
    }
    out
}

pub fn emit_csv(metrics: &[CycleMetrics], path: &Path) -> Result<(), ReportError> {
    std::fs::write(path, render_metrics_csv(metrics)).map_err(io_err(path))
}

/// Mean aggregated uncertainty over the correct/misclassified partitions of
/// a test evaluation, plus the per-sample rows. Empty partitions are absent,
/// not zero.
#[derive(Debug, Clone, Serialize)]
pub struct MisclassificationReport {
    pub mean_u_misclassified: Option<f64>,
    pub mean_u_correct: Option<f64>,
    pub rows: Vec<TestRow>,
}

pub fn misclassification_uncertainty_report(
    rows: &[TestRow],
) -> Result<MisclassificationReport, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::EmptyTestSet);
    }
    let (mut ms, mut mn, mut cs, mut cn) = (0.0, 0usize, 0.0, 0usize);
    for r in rows {
        if r.correct {
            cs += r.uncertainty;
            cn += 1;
        } else {
            ms += r.uncertainty;
            mn += 1;
        }
    }
    Ok(MisclassificationReport {
        mean_u_misclassified: (mn > 0).then(|| ms / mn as f64),
        mean_u_correct: (cn > 0).then(|| cs / cn as f64),
        rows: rows.to_vec(),
    })
}

/// Per-sample rows backing an uncertainty histogram: index, correctness,
/// aggregated u, and normalized Shannon entropy of the Dirichlet mean.
pub fn emit_test_rows_csv(rows: &[TestRow], path: &Path) -> Result<(), ReportError> {
    let mut out = String::from("index,correct,uncertainty,entropy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.index, r.correct as u8, r.uncertainty, r.entropy
        ));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

/// Methods × cycles matrix of seed-averaged test accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub methods: Vec<String>,
    pub num_cycle: usize,
    /// Row-major, one row per method.
    pub cells: Vec<Vec<f64>>,
}

/// Cellwise mean accuracy per (method, cycle) over seeds. Methods are sorted
/// by name so the table is invariant to run order.
pub fn summary_table(reports: &[ExperimentReport]) -> Result<SummaryTable, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::NoRuns);
    }
    let num_cycle = reports[0].cycles.len();
    for r in reports {
        if r.cycles.len() != num_cycle {
            return Err(ReportError::MismatchedCycles(num_cycle, r.cycles.len()));
        }
    }
    let mut methods: Vec<String> = reports.iter().map(|r| r.strategy.clone()).collect();
    methods.sort();
    methods.dedup();
    let cells = methods
        .iter()
        .map(|m| {
            (0..num_cycle)
                .map(|c| {
                    // Sum in seed order so the mean is bitwise invariant to
                    // run order.
                    let mut runs: Vec<(u64, f64)> = reports
                        .iter()
                        .filter(|r| &r.strategy == m)
                        .map(|r| (r.seed, r.cycles[c].test_accuracy))
                        .collect();
                    runs.sort_by_key(|&(s, _)| s);
                    runs.iter().map(|&(_, a)| a).sum::<f64>() / runs.len() as f64
                })
                .collect()
        })
        .collect();
    Ok(SummaryTable {
        methods,
        num_cycle,
        cells,
    })
}

impl SummaryTable {
    pub fn render(&self) -> String {
        let mut out = String::from("method");
        for c in 1..=self.num_cycle {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (m, row) in self.methods.iter().zip(&self.cells) {
            out.push_str(m);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-output-directory run manifest.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub git_describe: String,
    pub started_at: u64,
}

pub fn write_manifest(
    dir: &Path,
    config: serde_json::Value,
    seeds: &[u64],
) -> Result<(), ReportError> {
    let git_describe = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string());
    let started_at = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = RunManifest {
        config,
        seeds: seeds.to_vec(),
        git_describe,
        started_at,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest).unwrap()).map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(cycle: u32, acc: f64) -> CycleRecord {
        CycleRecord {
            cycle,
            test_accuracy: acc,
            labeled_count: 100 + cycle as usize,
            mean_u_misclassified: Some(0.8),
            mean_u_correct: Some(0.3),
            cv_param_diff: (cycle > 0).then_some(1.5),
            selected: vec![],
            epoch_losses: vec![],
            gated_epochs: vec![],
        }
    }

    fn report(strategy: &str, seed: u64, accs: &[f64]) -> ExperimentReport {
        ExperimentReport {
            strategy: strategy.to_string(),
            seed,
            cycles: accs
                .iter()
                .enumerate()
                .map(|(c, &a)| rec(c as u32, a))
                .collect(),
            r_range: None,
            final_test_rows: vec![],
            final_params: vec![],
            layer_sizes: vec![],
        }
    }

    #[test]
    fn csv_header_only_when_empty() {
        let csv = render_metrics_csv(&[]);
        assert_eq!(csv, format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn csv_cardinality_and_roundtrip() {
        let reports: Vec<ExperimentReport> = (0..3)
            .map(|s| report("edalssc", s, &[0.5, 0.6, 0.7, 0.71, 0.72, 0.73, 0.74]))
            .collect();
        let metrics = metrics_from_reports(&reports);
        let csv = render_metrics_csv(&metrics);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 1 + 21);
        assert_eq!(lines[0], METRICS_HEADER);
        // parse a row back
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[0], "0");
        assert_eq!(fields[1], "edalssc");
        let acc: f64 = fields[3].parse().unwrap();
        assert!((acc - 0.5).abs() < 1e-6);
        // first-cycle cv is absent -> empty field
        assert_eq!(fields[7], "");
    }

    #[test]
    fn csv_deterministic_across_reorderings() {
        let a = report("edalssc", 1, &[0.5, 0.6]);
        let b = report("random", 0, &[0.4, 0.5]);
        let m1 = metrics_from_reports(&[a.clone(), b.clone()]);
        let m2 = metrics_from_reports(&[b, a]);
        assert_eq!(render_metrics_csv(&m1), render_metrics_csv(&m2));
    }

    #[test]
    fn summary_single_run_echoes() {
        let r = report("full", 0, &[0.5, 0.6, 0.7]);
        let t = summary_table(&[r.clone()]).unwrap();
        assert_eq!(t.methods, vec!["full"]);
        assert_eq!(t.cells[0], vec![0.5, 0.6, 0.7]);
    }

    #[test]
    fn summary_means_and_permutation_invariance() {
        let runs = vec![
            report("edalssc", 0, &[0.4, 0.6]),
            report("edalssc", 1, &[0.6, 0.8]),
            report("edalssc", 2, &[0.5, 0.7]),
            report("random", 0, &[0.3, 0.4]),
        ];
        let t = summary_table(&runs).unwrap();
        let i = t.methods.iter().position(|m| m == "edalssc").unwrap();
        assert!((t.cells[i][0] - 0.5).abs() < 1e-12);
        assert!((t.cells[i][1] - 0.7).abs() < 1e-12);

        let mut shuffled = runs.clone();
        shuffled.reverse();
        assert_eq!(summary_table(&shuffled).unwrap(), t);
    }

    #[test]
    fn summary_rejects_mismatched_cycles() {
        let runs = vec![report("a", 0, &[0.5, 0.6]), report("b", 0, &[0.5])];
        assert!(matches!(
            summary_table(&runs),
            Err(ReportError::MismatchedCycles(2, 1))
        ));
    }

    #[test]
    fn misclassification_partitions() {
        let rows = vec![
            TestRow {
                index: 0,
                correct: true,
                uncertainty: 0.2,
                entropy: 0.1,
            },
            TestRow {
                index: 1,
                correct: false,
                uncertainty: 0.8,
                entropy: 0.9,
            },
            TestRow {
                index: 2,
                correct: true,
                uncertainty: 0.4,
                entropy: 0.2,
            },
        ];
        let rep = misclassification_uncertainty_report(&rows).unwrap();
        assert!((rep.mean_u_misclassified.unwrap() - 0.8).abs() < 1e-15);
        assert!((rep.mean_u_correct.unwrap() - 0.3).abs() < 1e-15);

        // all-correct: misclassified partition absent, not zero
        let all_correct: Vec<TestRow> = rows.iter().filter(|r| r.correct).cloned().collect();
        let rep = misclassification_uncertainty_report(&all_correct).unwrap();
        assert!(rep.mean_u_misclassified.is_none());

        assert!(matches!(
            misclassification_uncertainty_report(&[]),
            Err(ReportError::EmptyTestSet)
        ));
    }
}
