//! CSV artifacts: per-round traces, the mean regret curve and per-algorithm
//! totals.

use std::path::{Path, PathBuf};

use glinbandit::env::RoundRecord;
use thiserror::Error;

use crate::runner::{AlgorithmSummary, CurvePoint, RunResult};

pub const TRACE_HEADER: [&str; 7] = ["run_id", "t", "arm_index", "instant_regret", "cum_regret", "switch1", "switch2"];
pub const CURVE_HEADER: [&str; 5] = ["algorithm", "t", "mean_cum_regret", "std_cum_regret", "runs"];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, line {line}: {message}")]
    Malformed { path: PathBuf, line: u64, message: String },
}

/// Decimal text with 12 significant digits; scientific notation outside
/// `[1e-5, 1e15)`.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".to_string() } else { x.to_string() };
    }
    let sci = format!("{x:.11e}");
    let exp: i32 = sci.split_once('e').and_then(|(_, e)| e.parse().ok()).expect("exponent");
    if !(-5..15).contains(&exp) {
        return sci;
    }
    let decimals = (11 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the successful runs ordered by `(run_id, t)`.
pub fn write_traces(path: &Path, runs: &[RunResult]) -> Result<(), OutputError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(TRACE_HEADER).map_err(&err)?;
    let mut ordered: Vec<(String, &RunResult)> = runs
        .iter()
        .filter(|r| r.outcome.is_ok())
        .map(|r| (r.run_id(), r))
        .collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0));
    for (id, run) in ordered {
        let trace = run.outcome.as_ref().expect("filtered");
        for r in &trace.records {
            w.write_record([
                id.clone(),
                r.t.to_string(),
                r.arm_index.to_string(),
                format_sig12(r.instant_regret),
                format_sig12(r.cum_regret),
                u8::from(r.switch1).to_string(),
                u8::from(r.switch2).to_string(),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One run as stored in a trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedRun {
    pub run_id: String,
    pub records: Vec<RoundRecord>,
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path, line: u64) -> Result<T, OutputError>
where
    T::Err: std::fmt::Display,
{
    rec.get(i)
        .ok_or_else(|| "missing field".to_string())
        .and_then(|s| s.parse::<T>().map_err(|e| format!("{}: {e}", s)))
        .map_err(|message| OutputError::Malformed {
            path: path.to_path_buf(),
            line,
            message: format!("column {}: {message}", i + 1),
        })
}

fn parse_flag(rec: &csv::StringRecord, i: usize, path: &Path, line: u64) -> Result<bool, OutputError> {
    match parse_field::<u8>(rec, i, path, line)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(OutputError::Malformed {
            path: path.to_path_buf(),
            line,
            message: format!("column {}: flag must be 0 or 1, got {v}", i + 1),
        }),
    }
}

fn check_header(rdr: &mut csv::Reader<std::fs::File>, expected: &[&str], path: &Path) -> Result<(), OutputError> {
    let header = rdr.headers().map_err(csv_err(path))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(OutputError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    Ok(())
}

/// Reads a trace file and re-verifies that `cum_regret` is the running sum
/// of `instant_regret` within each run.
pub fn load_traces(path: &Path) -> Result<Vec<LoadedRun>, OutputError> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    check_header(&mut rdr, &TRACE_HEADER, path)?;
    let mut runs: Vec<LoadedRun> = Vec::new();
    let mut running = 0.0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default().to_string();
        let record = RoundRecord {
            t: parse_field(&rec, 1, path, line)?,
            arm_index: parse_field(&rec, 2, path, line)?,
            instant_regret: parse_field(&rec, 3, path, line)?,
            cum_regret: parse_field(&rec, 4, path, line)?,
            switch1: parse_flag(&rec, 5, path, line)?,
            switch2: parse_flag(&rec, 6, path, line)?,
            reward: f64::NAN,
            best_mean: f64::NAN,
        };
        if runs.last().is_none_or(|r| r.run_id != id) {
            runs.push(LoadedRun {
                run_id: id,
                records: Vec::new(),
            });
            running = 0.0;
        }
        running += record.instant_regret;
        let tol = 1e-9 * running.abs().max(1.0);
        if (running - record.cum_regret).abs() > tol {
            return Err(OutputError::Malformed {
                path: path.to_path_buf(),
                line,
                message: format!("cum_regret {} is not the running sum {running}", record.cum_regret),
            });
        }
        runs.last_mut().expect("pushed").records.push(record);
    }
    Ok(runs)
}

pub fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<(), OutputError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(CURVE_HEADER).map_err(&err)?;
    for p in points {
        w.write_record([
            p.algorithm.clone(),
            p.t.to_string(),
            format_sig12(p.mean),
            format_sig12(p.std),
            p.runs.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_curve(path: &Path) -> Result<Vec<CurvePoint>, OutputError> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    check_header(&mut rdr, &CURVE_HEADER, path)?;
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        points.push(CurvePoint {
            algorithm: rec.get(0).unwrap_or_default().to_string(),
            t: parse_field(&rec, 1, path, line)?,
            mean: parse_field(&rec, 2, path, line)?,
            std: parse_field(&rec, 3, path, line)?,
            runs: parse_field(&rec, 4, path, line)?,
        });
    }
    Ok(points)
}

pub fn write_totals(path: &Path, totals: &[AlgorithmSummary]) -> Result<(), OutputError> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "algorithm",
        "runs",
        "failed",
        "mean_final_regret",
        "std_final_regret",
        "mean_count_i",
        "mean_count_ii",
        "mean_wall_time_s",
    ])
    .map_err(&err)?;
    for s in totals {
        w.write_record([
            s.algorithm.name().to_string(),
            s.runs.to_string(),
            s.failed.to_string(),
            format_sig12(s.mean_final_regret),
            format_sig12(s.std_final_regret),
            format_sig12(s.mean_count_i),
            format_sig12(s.mean_count_ii),
            format_sig12(s.mean_wall_time_s),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}
