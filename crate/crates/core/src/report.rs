//! Report files for a set of runs.
//!
//! `records.json` holds the raw results and is the input of every other
//! view. The CSV format writes four tables; the JSON format mirrors each of
//! them as an array of objects with the same field names.
//!
//! | file | columns |
//! |------|---------|
//! | `metrics` | method, memory, run, task, A_T, F_T, I_T, wall_time |
//! | `diagnostics` | method, memory, run, task, mean_weight_old, mean_weight_new, mean_logit_old, mean_logit_new, hsi, asi, esi |
//! | `accuracy` | method, memory, run, i, j, a_ij |
//! | `summary` | method, memory, task, runs, A_mean, A_ci, F_mean, F_ci, I_mean, I_ci, A_pct |
//!
//! Tasks are numbered from 1. `F_T` is empty for `T = 1`, `I_T` is empty when
//! no reference accuracies were computed, and the CI columns are empty for a
//! single run. `wall_time` is the only non-deterministic column.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::DifficultyInterval;
use crate::metrics::{average_accuracy, average_forgetting, average_intransigence, confidence_interval};
use crate::trainer::RunRecord;

pub const RECORDS_FILE: &str = "records.json";
pub const PARTIAL_MARKER: &str = "PARTIAL";

/// One finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub memory: usize,
    pub run: usize,
    pub seed: u64,
    pub record: RunRecord,
    /// Reference accuracies `a*_j`, empty when not computed.
    pub reference: Vec<f64>,
    /// Offline i.i.d. accuracy over all tasks, when requested.
    pub offline_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::config(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub memory: usize,
    pub run: usize,
    pub task: usize,
    #[serde(rename = "A_T")]
    pub a_t: f64,
    #[serde(rename = "F_T")]
    pub f_t: Option<f64>,
    #[serde(rename = "I_T")]
    pub i_t: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub method: String,
    pub memory: usize,
    pub run: usize,
    pub task: usize,
    pub mean_weight_old: f64,
    pub mean_weight_new: f64,
    pub mean_logit_old: f64,
    pub mean_logit_new: f64,
    pub hsi: usize,
    pub asi: usize,
    pub esi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub method: String,
    pub memory: usize,
    pub run: usize,
    pub i: usize,
    pub j: usize,
    pub a_ij: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub memory: usize,
    pub task: usize,
    pub runs: usize,
    #[serde(rename = "A_mean")]
    pub a_mean: f64,
    #[serde(rename = "A_ci")]
    pub a_ci: Option<f64>,
    #[serde(rename = "F_mean")]
    pub f_mean: Option<f64>,
    #[serde(rename = "F_ci")]
    pub f_ci: Option<f64>,
    #[serde(rename = "I_mean")]
    pub i_mean: Option<f64>,
    #[serde(rename = "I_ci")]
    pub i_ci: Option<f64>,
    /// Average accuracy in percent as `mean ± ci`.
    #[serde(rename = "A_pct")]
    pub a_pct: String,
}

pub fn metric_rows(results: &[RunResult]) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for r in results {
        let m = &r.record.accuracy;
        for t in 1..=m.num_tasks() {
            rows.push(MetricRow {
                method: r.method.clone(),
                memory: r.memory,
                run: r.run,
                task: t,
                a_t: average_accuracy(m, t)?,
                f_t: if t >= 2 { Some(average_forgetting(m, t)?) } else { None },
                i_t: if r.reference.len() >= t {
                    Some(average_intransigence(m, &r.reference[..t])?)
                } else {
                    None
                },
                wall_time: r.record.wall_time,
            });
        }
    }
    Ok(rows)
}

pub fn diagnostic_rows(results: &[RunResult]) -> Vec<DiagnosticRow> {
    results
        .iter()
        .flat_map(|r| {
            r.record.diagnostics.iter().map(|d| DiagnosticRow {
                method: r.method.clone(),
                memory: r.memory,
                run: r.run,
                task: d.task + 1,
                mean_weight_old: d.mean_weight_old,
                mean_weight_new: d.mean_weight_new,
                mean_logit_old: d.mean_logit_old,
                mean_logit_new: d.mean_logit_new,
                hsi: d.count(DifficultyInterval::Hard),
                asi: d.count(DifficultyInterval::Ambiguous),
                esi: d.count(DifficultyInterval::Easy),
            })
        })
        .collect()
}

pub fn accuracy_rows(results: &[RunResult]) -> Vec<AccuracyRow> {
    let mut rows = Vec::new();
    for r in results {
        let m = &r.record.accuracy;
        for i in 0..m.num_tasks() {
            for j in 0..=i {
                if let Some(a) = m.get(i, j) {
                    rows.push(AccuracyRow {
                        method: r.method.clone(),
                        memory: r.memory,
                        run: r.run,
                        i: i + 1,
                        j: j + 1,
                        a_ij: a,
                    });
                }
            }
        }
    }
    rows
}

fn mean_ci(values: &[f64]) -> Result<(f64, Option<f64>)> {
    match values.len() {
        0 => Err(Error::input("no values to summarize")),
        1 => Ok((values[0], None)),
        _ => confidence_interval(values).map(|(m, h)| (m, Some(h))),
    }
}

/// Mean and 95% confidence half-width per (method, memory, task), in the
/// order groups first appear in `metrics`.
pub fn summary_rows(metrics: &[MetricRow]) -> Result<Vec<SummaryRow>> {
    let mut keys: Vec<(String, usize, usize)> = Vec::new();
    for r in metrics {
        let key = (r.method.clone(), r.memory, r.task);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, memory, task)| {
            let group: Vec<&MetricRow> = metrics
                .iter()
                .filter(|r| r.method == method && r.memory == memory && r.task == task)
                .collect();
            let a: Vec<f64> = group.iter().map(|r| r.a_t).collect();
            let f: Vec<f64> = group.iter().filter_map(|r| r.f_t).collect();
            let i: Vec<f64> = group.iter().filter_map(|r| r.i_t).collect();
            let (a_mean, a_ci) = mean_ci(&a)?;
            let (f_mean, f_ci) = if f.len() == group.len() {
                let (m, c) = mean_ci(&f)?;
                (Some(m), c)
            } else {
                (None, None)
            };
            let (i_mean, i_ci) = if i.len() == group.len() {
                let (m, c) = mean_ci(&i)?;
                (Some(m), c)
            } else {
                (None, None)
            };
            let a_pct = match a_ci {
                Some(c) => format!("{:.1} ± {:.1}", 100.0 * a_mean, 100.0 * c),
                None => format!("{:.1}", 100.0 * a_mean),
            };
            Ok(SummaryRow {
                method,
                memory,
                task,
                runs: group.len(),
                a_mean,
                a_ci,
                f_mean,
                f_ci,
                i_mean,
                i_ci,
                a_pct,
            })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub const METRIC_COLUMNS: [&str; 8] = ["method", "memory", "run", "task", "A_T", "F_T", "I_T", "wall_time"];
pub const DIAGNOSTIC_COLUMNS: [&str; 11] = [
    "method",
    "memory",
    "run",
    "task",
    "mean_weight_old",
    "mean_weight_new",
    "mean_logit_old",
    "mean_logit_new",
    "hsi",
    "asi",
    "esi",
];
pub const ACCURACY_COLUMNS: [&str; 6] = ["method", "memory", "run", "i", "j", "a_ij"];
pub const SUMMARY_COLUMNS: [&str; 11] = [
    "method", "memory", "task", "runs", "A_mean", "A_ci", "F_mean", "F_ci", "I_mean", "I_ci", "A_pct",
];

/// Writes the four report tables into `dir` and returns the paths written.
pub fn emit_report(results: &[RunResult], dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::input("no run records to report"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics = metric_rows(results)?;
    let diagnostics = diagnostic_rows(results);
    let accuracy = accuracy_rows(results);
    let summary = summary_rows(&metrics)?;
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let path = |name: &str| dir.join(format!("{name}.{ext}"));
    let paths = vec![path("metrics"), path("diagnostics"), path("accuracy"), path("summary")];
    match format {
        Format::Csv => {
            write_csv(&paths[0], &METRIC_COLUMNS, &metrics)?;
            write_csv(&paths[1], &DIAGNOSTIC_COLUMNS, &diagnostics)?;
            write_csv(&paths[2], &ACCURACY_COLUMNS, &accuracy)?;
            write_csv(&paths[3], &SUMMARY_COLUMNS, &summary)?;
        }
        Format::Json => {
            write_json(&paths[0], &metrics)?;
            write_json(&paths[1], &diagnostics)?;
            write_json(&paths[2], &accuracy)?;
            write_json(&paths[3], &summary)?;
        }
    }
    Ok(paths)
}

pub fn write_records(results: &[RunResult], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(RECORDS_FILE);
    write_json(&path, results)?;
    Ok(path)
}

pub fn read_records(dir: &Path) -> Result<Vec<RunResult>> {
    let path = dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
