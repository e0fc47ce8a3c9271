//! Success rate, success weighted by path length, and path efficiency.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env_graph::{Environment, GraphError, GroundTruth};
use crate::search_sim::{EpisodeResult, Outcome};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid path lengths: traversed {traversed}, ideal {ideal}")]
    InvalidLength { traversed: f64, ideal: f64 },
}

/// Shortest-path distance from `start` to the waypoint of the host object.
pub fn ideal_length(env: &Environment, start: &str, truth: &GroundTruth) -> Result<f64, GraphError> {
    let host = env.object(&truth.host_object)?;
    env.distance(start, &host.waypoint)
}

fn check_lengths(traversed: f64, ideal: f64) -> Result<(), MetricsError> {
    if !(traversed.is_finite() && ideal.is_finite() && traversed >= 0.0 && ideal >= 0.0) {
        return Err(MetricsError::InvalidLength { traversed, ideal });
    }
    Ok(())
}

/// Fraction of episodes that ended `Found`.
pub fn success_rate(results: &[EpisodeResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let found = results.iter().filter(|r| r.success()).count();
    Ok(found as f64 / results.len() as f64)
}

/// One episode's SPL term, `S * p_s / max(p_i, p_s)`. A success with zero
/// ideal length scores 1.
pub fn spl_term(success: bool, traversed: f64, ideal: f64) -> Result<f64, MetricsError> {
    check_lengths(traversed, ideal)?;
    if !success {
        return Ok(0.0);
    }
    if ideal == 0.0 {
        return Ok(1.0);
    }
    Ok(ideal / traversed.max(ideal))
}

pub fn spl(results: &[EpisodeResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut sum = 0.0;
    for r in results {
        sum += spl_term(r.success(), r.traversed_length, r.ideal_length)?;
    }
    Ok(sum / results.len() as f64)
}

/// `p_s / max(p_i, p_s)`, or `None` when the ideal length is zero.
pub fn path_efficiency_of(traversed: f64, ideal: f64) -> Result<Option<f64>, MetricsError> {
    check_lengths(traversed, ideal)?;
    if ideal == 0.0 {
        return Ok(None);
    }
    Ok(Some(ideal / traversed.max(ideal)))
}

pub fn path_efficiency(result: &EpisodeResult) -> Result<Option<f64>, MetricsError> {
    path_efficiency_of(result.traversed_length, result.ideal_length)
}

/// Path efficiency credited to an episode that did not end `Found`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePe {
    /// A failed search earns no efficiency.
    #[default]
    Zero,
    /// `p_s / max(p_i, p_s)` of the path walked until termination.
    Traversed,
}

impl FailurePe {
    pub fn as_str(self) -> &'static str {
        match self {
            FailurePe::Zero => "zero",
            FailurePe::Traversed => "traversed",
        }
    }
}

impl fmt::Display for FailurePe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailurePe {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "zero" => Ok(FailurePe::Zero),
            "traversed" => Ok(FailurePe::Traversed),
            other => Err(format!("unknown failure PE rule `{other}` (expected zero or traversed)")),
        }
    }
}

/// PE of one episode under a failure rule. `None` when the ideal length is
/// zero, whatever the outcome.
pub fn episode_pe(result: &EpisodeResult, rule: FailurePe) -> Result<Option<f64>, MetricsError> {
    let pe = path_efficiency(result)?;
    Ok(match (result.success(), rule) {
        (false, FailurePe::Zero) => pe.map(|_| 0.0),
        _ => pe,
    })
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// One CSV row per episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub method: String,
    pub trial: usize,
    pub start: String,
    pub host_object: String,
    pub host_waypoint: String,
    pub outcome: String,
    pub success: bool,
    pub traversed_length: f64,
    pub ideal_length: f64,
    /// PE under the batch's failure rule; feeds the summary.
    pub pe: Option<f64>,
    /// `p_s / max(p_i, p_s)` of the walked path, whatever the outcome.
    pub pe_path: Option<f64>,
    pub spl_term: f64,
    pub steps: usize,
    pub consumed: f64,
    pub seed: u64,
    pub error: Option<String>,
}

impl EpisodeRow {
    pub fn from_result(
        method: &str,
        trial: usize,
        host_object: &str,
        result: &EpisodeResult,
        rule: FailurePe,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            method: method.to_string(),
            trial,
            start: result.start.clone(),
            host_object: host_object.to_string(),
            host_waypoint: result.host_waypoint.clone(),
            outcome: result.outcome.as_str().to_string(),
            success: result.outcome == Outcome::Found,
            traversed_length: result.traversed_length,
            ideal_length: result.ideal_length,
            pe: episode_pe(result, rule)?,
            pe_path: path_efficiency(result)?,
            spl_term: spl_term(result.success(), result.traversed_length, result.ideal_length)?,
            steps: result.steps.len(),
            consumed: result.consumed,
            seed: result.seed,
            error: None,
        })
    }

    /// Row for an episode that failed before producing a result. It counts
    /// as a failed attempt and carries no path efficiency.
    pub fn from_error(method: &str, trial: usize, start: &str, host_object: &str, seed: u64, error: String) -> Self {
        Self {
            method: method.to_string(),
            trial,
            start: start.to_string(),
            host_object: host_object.to_string(),
            host_waypoint: String::new(),
            outcome: "error".into(),
            success: false,
            traversed_length: 0.0,
            ideal_length: 0.0,
            pe: None,
            pe_path: None,
            spl_term: 0.0,
            steps: 0,
            consumed: 0.0,
            seed,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub method: String,
    pub n: usize,
    pub sr: f64,
    pub spl: f64,
    pub pe_mean: Option<f64>,
    pub pe_std: Option<f64>,
    /// Episodes contributing to the PE statistics.
    pub pe_n: usize,
    /// Episodes with zero ideal length, left out of PE.
    pub pe_excluded: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub summary: BatchSummary,
    pub rows: Vec<EpisodeRow>,
}

impl BatchReport {
    /// Summary values are computed from the rows alone.
    pub fn from_rows(method: &str, rows: Vec<EpisodeRow>) -> Result<Self, MetricsError> {
        if rows.is_empty() {
            return Err(MetricsError::EmptyBatch);
        }
        let n = rows.len();
        let sr = rows.iter().filter(|r| r.success).count() as f64 / n as f64;
        let spl = rows.iter().map(|r| r.spl_term).sum::<f64>() / n as f64;
        let pes: Vec<f64> = rows.iter().filter_map(|r| r.pe).collect();
        let errors = rows.iter().filter(|r| r.error.is_some()).count();
        let stats = mean_std(&pes);
        Ok(Self {
            summary: BatchSummary {
                method: method.to_string(),
                n,
                sr,
                spl,
                pe_mean: stats.map(|s| s.0),
                pe_std: stats.map(|s| s.1),
                pe_n: pes.len(),
                pe_excluded: n - errors - pes.len(),
                errors,
            },
            rows,
        })
    }
}
