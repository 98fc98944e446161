//! Aggregation of run results into learning curves and method tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::metrics::METRIC_NAMES;
use crate::run::RunResult;
use crate::BenchError;

/// Runs sharing dataset, method, mode and kernel.
pub fn group_key(r: &RunResult) -> String {
    format!("{}/{}-{}/{}", r.data, r.config.method, r.config.mode, r.config.kernel)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub n_train: usize,
    pub mean_log: f64,
    /// Standard error of the mean; `None` with a single repetition.
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub key: String,
    pub data: String,
    pub repetitions: usize,
    /// Per metric name, the curve over steps.
    pub curves: BTreeMap<String, Vec<CurvePoint>>,
    /// Per metric name, the mean log metric over repetitions and steps.
    pub overall: BTreeMap<String, f64>,
    /// Mean log RMSE minus mean log MAE after the initial step.
    pub initial_log_rmse_mae_gap: f64,
}

/// Mean and standard error of the mean (sample variance over n).
pub fn mean_and_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Groups results and averages natural-log metrics over repetitions.
pub fn aggregate_log_means(results: &[RunResult]) -> Result<Vec<GroupSummary>, BenchError> {
    let mut groups: BTreeMap<String, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        groups.entry(group_key(r)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, runs)| {
            let n_steps = runs[0].steps.len();
            if runs.iter().any(|r| r.steps.len() != n_steps) {
                return Err(BenchError::Data(format!("runs in group {key} have different step counts")));
            }
            let mut curves = BTreeMap::new();
            let mut overall = BTreeMap::new();
            for name in METRIC_NAMES {
                let log_of = |r: &RunResult, s: usize| r.steps[s].metrics.get(name).expect("known metric").ln();
                let curve: Vec<CurvePoint> = (0..n_steps)
                    .map(|s| {
                        let logs: Vec<f64> = runs.iter().map(|r| log_of(r, s)).collect();
                        let (mean_log, stderr) = mean_and_stderr(&logs);
                        CurvePoint { step: runs[0].steps[s].step, n_train: runs[0].steps[s].n_train, mean_log, stderr }
                    })
                    .collect();
                overall.insert(name.to_owned(), curve.iter().map(|c| c.mean_log).sum::<f64>() / n_steps as f64);
                curves.insert(name.to_owned(), curve);
            }
            let gap = curves["rmse"][0].mean_log - curves["mae"][0].mean_log;
            Ok(GroupSummary {
                key,
                data: runs[0].data.clone(),
                repetitions: runs.len(),
                curves,
                overall,
                initial_log_rmse_mae_gap: gap,
            })
        })
        .collect()
}

/// Reads every `*.json` run result in `dir`, sorted by file name.
pub fn read_results(dir: &Path) -> Result<Vec<RunResult>, BenchError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Ok(serde_json::from_slice(&fs::read(p)?)?)).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `curve_<metric>.csv`, `methods.csv` and `predictor.csv` into `out_dir`.
pub fn emit_report(results_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let results = read_results(results_dir)?;
    if results.is_empty() {
        return Err(BenchError::Data(format!("no run results in {}", results_dir.display())));
    }
    let summaries = aggregate_log_means(&results)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    for name in METRIC_NAMES {
        let path = out_dir.join(format!("curve_{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["group", "step", "n_train", "mean_log", "stderr"])?;
        for s in &summaries {
            for c in &s.curves[name] {
                w.write_record([s.key.clone(), c.step.to_string(), c.n_train.to_string(), c.mean_log.to_string(), fmt_opt(c.stderr)])?;
            }
        }
        w.flush()?;
        written.push(path);
    }

    let path = out_dir.join("methods.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["group".to_owned(), "repetitions".to_owned()];
    header.extend(METRIC_NAMES.iter().map(|m| format!("mean_log_{m}")));
    w.write_record(&header)?;
    for s in &summaries {
        let mut row = vec![s.key.clone(), s.repetitions.to_string()];
        row.extend(METRIC_NAMES.iter().map(|m| s.overall[*m].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("predictor.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["data", "group", "initial_log_rmse_minus_log_mae"])?;
    for s in &summaries {
        w.write_record([s.data.clone(), s.key.clone(), s.initial_log_rmse_mae_gap.to_string()])?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stderr_needs_two_values() {
        assert_eq!(mean_and_stderr(&[2.0]), (2.0, None));
        let (m, s) = mean_and_stderr(&[1.0, 3.0]);
        // Sample variance 2, so sqrt(2 / 2).
        assert_eq!((m, s), (2.0, Some(1.0)));
    }
}
