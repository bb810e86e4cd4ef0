//! Evaluation metrics computed from per-scan traces: detection probability,
//! sensing latency and the sensing-to-communications power reallocation
//! ratio.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::{Decision, EArqCategory, Hypothesis, ReportKind};
use crate::phy::dbm_to_watts;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("target never inside the sensing region; detection probability undefined")]
    NoTargetInRegion,
    #[error("empty trace")]
    EmptyTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan: usize,
    pub time_s: f64,
    pub beam: usize,
    pub decision: Decision,
    pub resi: f64,
    pub p_used_dbm: f64,
    pub p_budget_dbm: f64,
    pub tg_in_region: bool,
    pub tg_in_beam: bool,
    pub report: ReportKind,
}

impl ScanRecord {
    /// Whether this scan is a confirmed detection for latency purposes:
    /// H3 for SSF, ACK for e-ARQ, and an in-beam RESI above the detection
    /// threshold for open-loop.
    pub fn is_lock(&self, detect_threshold: f64) -> bool {
        match self.decision {
            Decision::Ssf(h) => h == Hypothesis::H3,
            Decision::EArq(c) => c == EArqCategory::Ack,
            Decision::OpenLoop => self.tg_in_beam && self.resi > detect_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub mean_scans: Option<f64>,
    pub mean_seconds: Option<f64>,
    pub completed: usize,
    pub censored: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub p_det: f64,
    pub latency: Latency,
    pub realloc_ratio: f64,
    /// Mean sensing power actually used, dBm (average taken in watts).
    pub p_consumed_dbm: f64,
    pub lock_cycles: usize,
}

/// `#(target in current beam ∧ RESI > η_top) / #(target in region)`.
pub fn detection_probability(trace: &[ScanRecord], eta_top: f64) -> Result<f64, MetricsError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for r in trace {
        if r.tg_in_region {
            total += 1;
        }
        if r.tg_in_beam && r.resi > eta_top {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::NoTargetInRegion);
    }
    Ok(hits as f64 / total as f64)
}

/// Mean number of scans from the target entering the region (or the
/// protocol dropping out of lock while it is inside) to the next lock,
/// counting both ends. Intervals that never close, or that the target
/// leaves the region during, are censored.
pub fn average_sensing_latency(
    trace: &[ScanRecord],
    detect_threshold: f64,
    scan_duration_s: f64,
) -> Latency {
    let mut open: Option<usize> = None;
    let mut lengths = Vec::new();
    let mut prev_in_region = false;
    let mut prev_lock = false;
    let mut censored = 0usize;
    for r in trace {
        let lock = r.is_lock(detect_threshold);
        if open.is_some() && !r.tg_in_region {
            open = None;
            censored += 1;
        }
        if open.is_none()
            && r.tg_in_region
            && (!prev_in_region || prev_lock)
            && !(prev_lock && lock)
        {
            open = Some(r.scan);
        }
        if let (Some(start), true) = (open, lock) {
            lengths.push((r.scan - start + 1) as f64);
            open = None;
        }
        prev_in_region = r.tg_in_region;
        prev_lock = lock;
    }
    let completed = lengths.len();
    let mean = (completed > 0).then(|| lengths.iter().sum::<f64>() / completed as f64);
    Latency {
        mean_scans: mean,
        mean_seconds: mean.map(|m| m * scan_duration_s),
        completed,
        censored: censored + usize::from(open.is_some()),
    }
}

/// Denominator of the reallocation ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RatioBasis {
    /// Share of the per-scan sensing budget handed back.
    #[default]
    SensingBudget,
    /// Same watts, expressed as a share of a fixed total ISAC power.
    TotalPower { total_dbm: f64 },
}

/// Mean over scans of `(budget − used) / denominator` in linear power.
pub fn power_reallocation_ratio(
    trace: &[ScanRecord],
    basis: RatioBasis,
) -> Result<f64, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let sum: f64 = trace
        .iter()
        .map(|r| {
            let b = dbm_to_watts(r.p_budget_dbm);
            let den = match basis {
                RatioBasis::SensingBudget => b,
                RatioBasis::TotalPower { total_dbm } => dbm_to_watts(total_dbm),
            };
            (b - dbm_to_watts(r.p_used_dbm)) / den
        })
        .sum();
    Ok(sum / trace.len() as f64)
}

/// Mean used sensing power in dBm, averaged in watts.
pub fn mean_consumed_dbm(trace: &[ScanRecord]) -> Result<f64, MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let w: f64 = trace
        .iter()
        .map(|r| dbm_to_watts(r.p_used_dbm))
        .sum::<f64>()
        / trace.len() as f64;
    Ok(crate::phy::watts_to_dbm(w))
}

/// Number of times a lock was acquired and later lost.
pub fn lock_cycles(trace: &[ScanRecord], detect_threshold: f64) -> usize {
    trace
        .windows(2)
        .filter(|w| w[0].is_lock(detect_threshold) && !w[1].is_lock(detect_threshold))
        .count()
}

pub fn scenario_metrics(
    trace: &[ScanRecord],
    detect_threshold: f64,
    scan_duration_s: f64,
    basis: RatioBasis,
) -> Result<ScenarioMetrics, MetricsError> {
    Ok(ScenarioMetrics {
        p_det: detection_probability(trace, detect_threshold)?,
        latency: average_sensing_latency(trace, detect_threshold, scan_duration_s),
        realloc_ratio: power_reallocation_ratio(trace, basis)?,
        p_consumed_dbm: mean_consumed_dbm(trace)?,
        lock_cycles: lock_cycles(trace, detect_threshold),
    })
}
