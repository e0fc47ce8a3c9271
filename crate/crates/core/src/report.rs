//! CSV and text rendering of run results.
//!
//! Files:
//! - `episodes.csv`: one row per (method, trial)
//! - `summary.csv`: one row per method
//! - `long.csv`: `method,trial,metric,value`, ready for plotting
//! - `trace.csv`: one row per visited waypoint

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::runner::MethodRun;
use crate::search_sim::DetectionOutcome;

pub const EPISODE_COLUMNS: [&str; 16] = [
    "method",
    "trial",
    "start",
    "host_object",
    "host_waypoint",
    "outcome",
    "success",
    "traversed_length",
    "ideal_length",
    "pe",
    "pe_path",
    "spl_term",
    "steps",
    "consumed",
    "seed",
    "error",
];
pub const SUMMARY_COLUMNS: [&str; 9] = [
    "method",
    "n",
    "sr",
    "spl",
    "pe_mean",
    "pe_std",
    "pe_n",
    "pe_excluded",
    "errors",
];
pub const LONG_COLUMNS: [&str; 4] = ["method", "trial", "metric", "value"];
pub const TRACE_COLUMNS: [&str; 9] = [
    "method",
    "trial",
    "step",
    "waypoint",
    "leg_meters",
    "traversed",
    "consumed",
    "detection",
    "instance",
];

#[derive(Serialize)]
struct LongRow<'a> {
    method: &'a str,
    trial: usize,
    metric: &'a str,
    value: Option<f64>,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    method: &'a str,
    trial: usize,
    step: usize,
    waypoint: &'a str,
    leg_meters: f64,
    traversed: f64,
    consumed: f64,
    detection: &'a str,
    instance: &'a str,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv write");
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv")
}

pub fn episodes_csv(runs: &[MethodRun]) -> String {
    to_csv(runs.iter().flat_map(|r| r.report.rows.iter()), &EPISODE_COLUMNS)
}

pub fn summary_csv(runs: &[MethodRun]) -> String {
    to_csv(runs.iter().map(|r| &r.report.summary), &SUMMARY_COLUMNS)
}

pub fn long_csv(runs: &[MethodRun]) -> String {
    let rows = runs.iter().flat_map(|run| run.report.rows.iter()).flat_map(|r| {
        let success = if r.success { 1.0 } else { 0.0 };
        [
            ("success", Some(success)),
            ("spl_term", Some(r.spl_term)),
            ("pe", r.pe),
            ("pe_path", r.pe_path),
            ("traversed_length", Some(r.traversed_length)),
            ("ideal_length", Some(r.ideal_length)),
        ]
        .map(|(metric, value)| LongRow {
            method: &r.method,
            trial: r.trial,
            metric,
            value,
        })
    });
    to_csv(rows, &LONG_COLUMNS)
}

pub fn trace_csv(runs: &[MethodRun]) -> String {
    let rows = runs.iter().flat_map(|run| {
        run.episodes.iter().filter_map(|(t, e)| e.as_ref().map(|e| (*t, e))).flat_map(move |(trial, ep)| {
            ep.steps.iter().enumerate().map(move |(step, s)| {
                let (detection, instance) = match &s.detection {
                    DetectionOutcome::TruePositive(i) => ("true_positive", i.as_str()),
                    DetectionOutcome::FalsePositive(i) => ("false_positive", i.as_str()),
                    DetectionOutcome::NoDetection => ("none", ""),
                };
                TraceRow {
                    method: run.method.as_str(),
                    trial,
                    step,
                    waypoint: &s.waypoint,
                    leg_meters: s.leg_meters,
                    traversed: s.traversed,
                    consumed: s.consumed,
                    detection,
                    instance,
                }
            })
        })
    });
    to_csv(rows, &TRACE_COLUMNS)
}

pub fn write_all(dir: &Path, runs: &[MethodRun]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("episodes.csv"), episodes_csv(runs))?;
    std::fs::write(dir.join("summary.csv"), summary_csv(runs))?;
    std::fs::write(dir.join("long.csv"), long_csv(runs))?;
    std::fs::write(dir.join("trace.csv"), trace_csv(runs))?;
    Ok(())
}

fn fixed(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "n/a".into())
}

/// Path-efficiency table: method, mean PE and population standard deviation.
pub fn pe_table(runs: &[MethodRun]) -> String {
    let mut out = format!("{:<18} {:>22}\n", "Method", "Avg. PE (Std. Dev)");
    for run in runs {
        let s = &run.report.summary;
        let _ = writeln!(
            out,
            "{:<18} {:>22}",
            run.method.display_name(),
            format!("{} ({})", fixed(s.pe_mean), fixed(s.pe_std))
        );
    }
    out
}

/// Success table: method, SR and SPL.
pub fn success_table(runs: &[MethodRun]) -> String {
    let mut out = format!("{:<18} {:>6} {:>6}\n", "Method", "SR", "SPL");
    for run in runs {
        let s = &run.report.summary;
        let _ = writeln!(out, "{:<18} {:>6.2} {:>6.2}", run.method.display_name(), s.sr, s.spl);
    }
    out
}
