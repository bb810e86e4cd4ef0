//! CSV and sidecar writers. Floats use Rust's shortest round-trip
//! formatting so identical runs produce identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use super::config::SimConfig;
use super::experiment::{ExperimentResult, IptOutcome, ScenarioTrace, VERSION};
use super::svg;
use super::HarnessError;
use crate::feedback::{Decision, ReportKind};
use crate::metrics::ScanRecord;

pub const TRACE_HEADER: [&str; 10] = [
    "scan",
    "time_s",
    "beam",
    "hypothesis",
    "resi",
    "p_used_dbm",
    "p_budget_dbm",
    "tg_in_region",
    "tg_in_beam",
    "report_kind",
];

pub const METRICS_HEADER: [&str; 9] = [
    "protocol",
    "threshold_method",
    "p_budget_dbm",
    "p_consumed_dbm",
    "p_det",
    "latency_scans",
    "latency_s",
    "realloc_ratio",
    "seed_count",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_trace_csv<W: Write>(out: W, trace: &ScenarioTrace) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.scan.to_string(),
            r.time_s.to_string(),
            r.beam.to_string(),
            r.decision.to_string(),
            r.resi.to_string(),
            r.p_used_dbm.to_string(),
            r.p_budget_dbm.to_string(),
            r.tg_in_region.to_string(),
            r.tg_in_beam.to_string(),
            r.report.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, HarnessError> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
        HarnessError::Runtime(format!(
            "bad trace field `{}` in column {i}",
            rec.get(i).unwrap_or("")
        ))
    })
}

/// Reads back a trace CSV written by [`write_trace_csv`].
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<ScanRecord>, HarnessError> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let report = match rec.get(9).unwrap_or("") {
            "binary" => ReportKind::Binary,
            "state_id" => ReportKind::StateId,
            "state_plus_peak" => ReportKind::StatePlusPeak,
            "full_measurement" => ReportKind::FullMeasurement,
            other => {
                return Err(HarnessError::Runtime(format!(
                    "unknown report kind `{other}`"
                )))
            }
        };
        let decision: Decision = rec
            .get(3)
            .unwrap_or("")
            .parse()
            .map_err(HarnessError::Runtime)?;
        out.push(ScanRecord {
            scan: parse_field(&rec, 0)?,
            time_s: parse_field(&rec, 1)?,
            beam: parse_field(&rec, 2)?,
            decision,
            resi: parse_field(&rec, 4)?,
            p_used_dbm: parse_field(&rec, 5)?,
            p_budget_dbm: parse_field(&rec, 6)?,
            tg_in_region: parse_field(&rec, 7)?,
            tg_in_beam: parse_field(&rec, 8)?,
            report,
        });
    }
    Ok(out)
}

/// One aggregated row per cell; failed cells are skipped.
pub fn write_metrics_csv<W: Write>(out: W, result: &ExperimentResult) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for c in &result.cells {
        let Some(a) = c.aggregate(result.scan_duration) else {
            continue;
        };
        w.write_record([
            c.protocol.to_string(),
            c.method.name().to_string(),
            c.budget_dbm.to_string(),
            a.p_consumed_dbm.to_string(),
            a.p_det.to_string(),
            opt(a.latency_scans),
            opt(a.latency_s),
            a.realloc_ratio.to_string(),
            a.seed_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per `(cell, seed)`, plus failed cells with their error.
pub fn write_per_seed_csv<W: Write>(out: W, result: &ExperimentResult) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "protocol",
        "threshold_method",
        "p_budget_dbm",
        "seed",
        "thresholds",
        "p_consumed_dbm",
        "p_det",
        "latency_scans",
        "latency_completed",
        "latency_censored",
        "realloc_ratio",
        "lock_cycles",
        "error",
    ])?;
    for c in &result.cells {
        let th: Vec<String> = c.thresholds.iter().map(|t| t.to_string()).collect();
        let th = th.join(" ");
        if let Some(e) = &c.error {
            let mut row = vec![
                c.protocol.to_string(),
                c.method.name().to_string(),
                c.budget_dbm.to_string(),
            ];
            row.extend(std::iter::repeat_n(String::new(), 9));
            row.push(e.clone());
            w.write_record(row)?;
            continue;
        }
        for r in &c.runs {
            let m = &r.metrics;
            w.write_record([
                c.protocol.to_string(),
                c.method.name().to_string(),
                c.budget_dbm.to_string(),
                r.seed.to_string(),
                th.clone(),
                m.p_consumed_dbm.to_string(),
                m.p_det.to_string(),
                opt(m.latency.mean_scans),
                m.latency.completed.to_string(),
                m.latency.censored.to_string(),
                m.realloc_ratio.to_string(),
                m.lock_cycles.to_string(),
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Iteration table; thresholds are listed top first (`T1 > T2 > T3`).
pub fn write_optimization_csv<W: Write>(out: W, outcome: &IptOutcome) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "T1", "T2", "T3", "f", "phi", "alpha", "mu"])?;
    let row =
        |it: usize, t: &[f64], f: f64, phi: Option<f64>, alpha: Option<f64>, mu: Option<f64>| {
            let mut top: Vec<String> = t.iter().rev().map(|x| x.to_string()).collect();
            top.resize(3, String::new());
            let mut r = vec![it.to_string()];
            r.extend(top);
            r.extend([f.to_string(), opt(phi), opt(alpha), opt(mu)]);
            r
        };
    let tr = &outcome.trace;
    w.write_record(row(0, &tr.initial_t, tr.initial_f, None, None, None))?;
    for it in &tr.iterations {
        w.write_record(row(
            it.iteration,
            &it.t,
            it.f,
            Some(it.phi),
            Some(it.alpha),
            Some(it.mu),
        ))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunMeta<'a> {
    pub version: &'a str,
    pub command: &'a str,
    pub config_hash: String,
    pub seeds: &'a [u64],
    pub optimizer: &'a super::config::OptimizerSettings,
    pub config: &'a SimConfig,
}

pub fn write_run_meta(
    path: &Path,
    command: &str,
    cfg: &SimConfig,
    seeds: &[u64],
) -> Result<(), HarnessError> {
    let meta = RunMeta {
        version: VERSION,
        command,
        config_hash: cfg.fingerprint(),
        seeds,
        optimizer: &cfg.optimizer,
        config: cfg,
    };
    let text =
        serde_json::to_string_pretty(&meta).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut Vec<u8>) -> Result<(), HarnessError>,
) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    body(&mut buf)?;
    std::fs::write(dir.join(name), buf)?;
    Ok(())
}

/// Writes the sweep figures (`pdet.svg`, `latency.svg`, `realloc.svg`).
pub fn write_sweep_svgs(dir: &Path, result: &ExperimentResult) -> Result<(), HarnessError> {
    std::fs::write(dir.join("pdet.svg"), svg::pdet_svg(result))?;
    std::fs::write(dir.join("latency.svg"), svg::latency_svg(result))?;
    std::fs::write(dir.join("realloc.svg"), svg::realloc_svg(result))?;
    Ok(())
}

pub fn write_thresholding_svg(dir: &Path, result: &ExperimentResult) -> Result<(), HarnessError> {
    std::fs::write(dir.join("thresholding.svg"), svg::thresholding_svg(result))?;
    Ok(())
}
