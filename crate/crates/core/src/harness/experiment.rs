//! Scenario runs, threshold calibration/optimization and power sweeps.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use super::config::{CalibrationPower, SimConfig, ThresholdMethod};
use super::world::{NoiseBank, World};
use super::HarnessError;
use crate::feedback::{
    Controller, EArqThresholds, Hypothesis, PowerLimits, ProtocolKind, ProtocolThresholds,
    ThresholdVector,
};
use crate::metrics::{scenario_metrics, RatioBasis, ScanRecord, ScenarioMetrics};
use crate::optimizer::{
    fit_earq_distributions, fit_hypothesis_distributions, map_thresholds, optimize_thresholds,
    HypothesisFit, MapThresholds, OptimizationTrace, OptimizerError,
};
use crate::phy::{dbm_to_watts, watts_to_dbm};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ordered per-scan records of one `(config, protocol, thresholds, seed)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTrace {
    pub thresholds: ProtocolThresholds,
    pub budget_dbm: f64,
    pub seed: u64,
    pub scan_duration: f64,
    pub records: Vec<ScanRecord>,
    pub realloc_basis: RatioBasis,
    pub config_hash: String,
    pub version: &'static str,
}

impl ScenarioTrace {
    pub fn protocol(&self) -> ProtocolKind {
        self.thresholds.kind()
    }

    pub fn detect_threshold(&self) -> f64 {
        self.thresholds.detection_threshold()
    }

    pub fn metrics(&self) -> Result<ScenarioMetrics, HarnessError> {
        Ok(scenario_metrics(
            &self.records,
            self.detect_threshold(),
            self.scan_duration,
            self.realloc_basis,
        )?)
    }
}

/// Thresholds in force for all three protocols at one budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedThresholds {
    pub ssf: ThresholdVector,
    pub earq: EArqThresholds,
    pub openloop_detect: f64,
}

impl ResolvedThresholds {
    pub fn for_protocol(&self, p: ProtocolKind) -> ProtocolThresholds {
        match p {
            ProtocolKind::Ssf => ProtocolThresholds::Ssf(self.ssf),
            ProtocolKind::Earq => ProtocolThresholds::EArq(self.earq),
            ProtocolKind::Openloop => ProtocolThresholds::OpenLoop {
                detect: self.openloop_detect,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapCalibration {
    pub fit: HypothesisFit,
    pub map: MapThresholds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IptOutcome {
    pub protocol: ProtocolKind,
    pub budget_dbm: f64,
    pub map: Vec<f64>,
    pub ipt: Vec<f64>,
    pub trace: OptimizationTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: ScenarioMetrics,
}

/// Runs of one `(protocol, threshold method, budget)` grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub protocol: ProtocolKind,
    pub method: ThresholdMethod,
    pub budget_dbm: f64,
    pub thresholds: Vec<f64>,
    pub runs: Vec<SeedRun>,
    pub error: Option<String>,
}

/// Seed-aggregated view of a [`Cell`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub p_consumed_dbm: f64,
    pub p_det: f64,
    pub p_det_min: f64,
    pub p_det_max: f64,
    pub latency_scans: Option<f64>,
    pub latency_s: Option<f64>,
    pub realloc_ratio: f64,
    pub seed_count: usize,
}

impl Cell {
    pub fn aggregate(&self, scan_duration: f64) -> Option<Aggregate> {
        if self.runs.is_empty() {
            return None;
        }
        let n = self.runs.len() as f64;
        let m = || self.runs.iter().map(|r| &r.metrics);
        let watts = m().map(|x| dbm_to_watts(x.p_consumed_dbm)).sum::<f64>() / n;
        let lat: Vec<f64> = m().filter_map(|x| x.latency.mean_scans).collect();
        let latency_scans = (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64);
        Some(Aggregate {
            p_consumed_dbm: watts_to_dbm(watts),
            p_det: m().map(|x| x.p_det).sum::<f64>() / n,
            p_det_min: m().map(|x| x.p_det).fold(f64::INFINITY, f64::min),
            p_det_max: m().map(|x| x.p_det).fold(f64::NEG_INFINITY, f64::max),
            latency_scans,
            latency_s: latency_scans.map(|l| l * scan_duration),
            realloc_ratio: m().map(|x| x.realloc_ratio).sum::<f64>() / n,
            seed_count: self.runs.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub cells: Vec<Cell>,
    pub scan_duration: f64,
}

impl ExperimentResult {
    pub fn cell(
        &self,
        protocol: ProtocolKind,
        method: ThresholdMethod,
        budget_dbm: f64,
    ) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.protocol == protocol && c.method == method && c.budget_dbm == budget_dbm)
    }

    pub fn failed_cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.error.is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdComparison {
    pub result: ExperimentResult,
    pub optimizations: Vec<IptOutcome>,
}

/// Worker pool bounded by `ISAC_SSF_THREADS` (default: available parallelism).
pub fn worker_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let threads = match std::env::var("ISAC_SSF_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| HarnessError::Config {
                field: "ISAC_SSF_THREADS".into(),
                message: format!("expected a positive integer, got `{v}`"),
            })?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Runtime(e.to_string()))
}

/// Owns a validated config, its precomputed [`World`] and a per-seed noise
/// cache.
pub struct Simulator {
    cfg: SimConfig,
    world: World,
    hash: String,
    noise: Mutex<HashMap<u64, Arc<NoiseBank>>>,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, HarnessError> {
        let world = World::build(&cfg)?;
        let hash = cfg.fingerprint();
        Ok(Self {
            cfg,
            world,
            hash,
            noise: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn noise(&self, seed: u64) -> Arc<NoiseBank> {
        if let Some(bank) = self.noise.lock().expect("noise cache").get(&seed) {
            return bank.clone();
        }
        let bank = Arc::new(self.world.noise_bank(seed));
        self.noise
            .lock()
            .expect("noise cache")
            .entry(seed)
            .or_insert(bank)
            .clone()
    }

    fn limits(&self, budget_dbm: f64) -> Result<PowerLimits, HarnessError> {
        let lo = self.cfg.phy.p_min_dbm.min(budget_dbm);
        Ok(PowerLimits::new(lo, budget_dbm)?)
    }

    /// The scan loop: filter the current beam at the current power,
    /// classify, step the protocol, record.
    pub fn run(
        &self,
        thresholds: ProtocolThresholds,
        budget_dbm: f64,
        seed: u64,
    ) -> Result<ScenarioTrace, HarnessError> {
        let noise = self.noise(seed);
        let w = &self.world;
        let mut ctrl = Controller::new(
            thresholds,
            self.cfg.feedback.control(),
            w.n_beam,
            self.limits(budget_dbm)?,
        );
        let mut records = Vec::with_capacity(w.n_scans);
        for scan in 0..w.n_scans {
            let beam = ctrl.state().beam;
            let p_dbm = ctrl.state().power_dbm;
            let m = w.measure(scan, beam, dbm_to_watts(p_dbm), &noise);
            let out = ctrl.step(m.resi);
            records.push(ScanRecord {
                scan,
                time_s: scan as f64 * w.scan_duration,
                beam,
                decision: out.decision,
                resi: m.resi,
                p_used_dbm: p_dbm,
                p_budget_dbm: budget_dbm,
                tg_in_region: w.in_region(scan),
                tg_in_beam: w.target_in_beam(scan, beam),
                report: out.action.report,
            });
        }
        Ok(ScenarioTrace {
            thresholds,
            budget_dbm,
            seed,
            scan_duration: w.scan_duration,
            records,
            realloc_basis: self.cfg.harness.realloc_basis,
            config_hash: self.hash.clone(),
            version: VERSION,
        })
    }

    /// Transmit power of the calibration runs for a cell at `budget_dbm`.
    pub fn calibration_power_dbm(&self, budget_dbm: f64) -> f64 {
        match self.cfg.optimizer.calibration_power {
            CalibrationPower::Floor => self.cfg.phy.p_min_dbm.min(budget_dbm),
            CalibrationPower::Budget => budget_dbm,
        }
    }

    /// Ground-truth-labeled RESI samples from open-loop runs over the
    /// calibration seeds.
    pub fn calibration_samples(
        &self,
        budget_dbm: f64,
    ) -> Result<Vec<(Hypothesis, f64)>, HarnessError> {
        let power = self.calibration_power_dbm(budget_dbm);
        let mut samples = Vec::new();
        for &seed in &self.cfg.optimizer.calibration_seeds {
            let trace = self.run(
                ProtocolThresholds::OpenLoop {
                    detect: f64::INFINITY,
                },
                power,
                seed,
            )?;
            samples.extend(
                trace
                    .records
                    .iter()
                    .map(|r| (self.world.label(r.scan, r.beam), r.resi)),
            );
        }
        Ok(samples)
    }

    pub fn map_calibration(
        &self,
        protocol: ProtocolKind,
        budget_dbm: f64,
    ) -> Result<MapCalibration, HarnessError> {
        let samples = self.calibration_samples(budget_dbm)?;
        let fit = match protocol {
            ProtocolKind::Earq => fit_earq_distributions(&samples)?,
            _ => fit_hypothesis_distributions(&samples)?,
        };
        let map = map_thresholds(&fit)?;
        Ok(MapCalibration { fit, map })
    }

    fn openloop_detect(&self, ssf: &ThresholdVector) -> f64 {
        self.cfg.feedback.openloop_detect.unwrap_or(ssf.eta2)
    }

    /// Threshold vector for `protocol` from ascending values.
    pub fn protocol_thresholds(
        &self,
        protocol: ProtocolKind,
        values: &[f64],
    ) -> Result<ProtocolThresholds, HarnessError> {
        Ok(match (protocol, values) {
            (ProtocolKind::Ssf, [a, b, c]) => {
                ProtocolThresholds::Ssf(ThresholdVector::new(*a, *b, *c)?)
            }
            (ProtocolKind::Earq, [a, b]) => ProtocolThresholds::EArq(EArqThresholds::new(*a, *b)?),
            (ProtocolKind::Openloop, [d]) => ProtocolThresholds::OpenLoop { detect: *d },
            _ => {
                return Err(HarnessError::Runtime(format!(
                    "{} thresholds for protocol {protocol}",
                    values.len()
                )))
            }
        })
    }

    /// Mean detection probability over `seeds`.
    pub fn evaluate_pdet(
        &self,
        thresholds: ProtocolThresholds,
        budget_dbm: f64,
        seeds: &[u64],
    ) -> Result<f64, HarnessError> {
        if seeds.is_empty() {
            return Err(HarnessError::Runtime(
                "evaluate_pdet needs at least one seed".into(),
            ));
        }
        let values: Vec<f64> = seeds
            .par_iter()
            .map(|&s| {
                let t = self.run(thresholds, budget_dbm, s)?;
                Ok(crate::metrics::detection_probability(
                    &t.records,
                    t.detect_threshold(),
                )?)
            })
            .collect::<Result<_, HarnessError>>()?;
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }

    /// MAP start refined by the interior-point optimizer on the evaluation
    /// seeds.
    pub fn optimize(
        &self,
        protocol: ProtocolKind,
        budget_dbm: f64,
    ) -> Result<IptOutcome, HarnessError> {
        let cal = self.map_calibration(protocol, budget_dbm)?;
        let start = cal.map.values.clone();
        let opt_cfg = self.cfg.optimizer.config_for(&start);
        let seeds = self.cfg.optimizer.eval_seeds.clone();
        let objective = |t: &[f64]| -> Result<f64, OptimizerError> {
            let th = self
                .protocol_thresholds(protocol, t)
                .map_err(|e| OptimizerError::Objective(e.to_string()))?;
            let p = self
                .evaluate_pdet(th, budget_dbm, &seeds)
                .map_err(|e| OptimizerError::Objective(e.to_string()))?;
            Ok(-p)
        };
        let (ipt, trace) = optimize_thresholds(&opt_cfg, &start, objective)?;
        Ok(IptOutcome {
            protocol,
            budget_dbm,
            map: start,
            ipt,
            trace,
        })
    }

    /// Thresholds for all protocols at one budget under `method`.
    pub fn resolve_thresholds(
        &self,
        method: ThresholdMethod,
        budget_dbm: f64,
    ) -> Result<ResolvedThresholds, HarnessError> {
        let (ssf, earq) = match method {
            ThresholdMethod::Fixed => {
                let s = self
                    .cfg
                    .feedback
                    .ssf_thresholds
                    .ok_or_else(|| HarnessError::Config {
                        field: "feedback.ssf_thresholds".into(),
                        message: "required for threshold_method = \"fixed\"".into(),
                    })?;
                let e = self
                    .cfg
                    .feedback
                    .earq_thresholds
                    .ok_or_else(|| HarnessError::Config {
                        field: "feedback.earq_thresholds".into(),
                        message: "required for threshold_method = \"fixed\"".into(),
                    })?;
                (s.to_vec(), e.to_vec())
            }
            ThresholdMethod::Map => (
                self.map_calibration(ProtocolKind::Ssf, budget_dbm)?
                    .map
                    .values,
                self.map_calibration(ProtocolKind::Earq, budget_dbm)?
                    .map
                    .values,
            ),
            ThresholdMethod::Ipt => (
                self.optimize(ProtocolKind::Ssf, budget_dbm)?.ipt,
                self.optimize(ProtocolKind::Earq, budget_dbm)?.ipt,
            ),
        };
        let ssf = ThresholdVector::new(ssf[0], ssf[1], ssf[2])?;
        let earq = EArqThresholds::new(earq[0], earq[1])?;
        Ok(ResolvedThresholds {
            ssf,
            earq,
            openloop_detect: self.openloop_detect(&ssf),
        })
    }

    fn run_cell(
        &self,
        thresholds: ProtocolThresholds,
        method: ThresholdMethod,
        budget_dbm: f64,
        seeds: &[u64],
    ) -> Cell {
        let runs: Result<Vec<SeedRun>, HarnessError> = seeds
            .iter()
            .map(|&seed| {
                Ok(SeedRun {
                    seed,
                    metrics: self.run(thresholds, budget_dbm, seed)?.metrics()?,
                })
            })
            .collect();
        let (runs, error) = match runs {
            Ok(r) => (r, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
        Cell {
            protocol: thresholds.kind(),
            method,
            budget_dbm,
            thresholds: thresholds.as_vec(),
            runs,
            error,
        }
    }

    /// Full cross product of protocols × budgets × seeds. A failing cell
    /// records its error and the sweep carries on.
    pub fn sweep(
        &self,
        protocols: &[ProtocolKind],
        budgets: &[f64],
        seeds: &[u64],
        method: ThresholdMethod,
    ) -> Result<ExperimentResult, HarnessError> {
        if budgets.is_empty() {
            return Err(HarnessError::Runtime("empty budget grid".into()));
        }
        let pool = worker_pool()?;
        let per_budget: Vec<Vec<Cell>> = pool.install(|| {
            budgets
                .par_iter()
                .map(|&budget| match self.resolve_thresholds(method, budget) {
                    Ok(resolved) => protocols
                        .iter()
                        .map(|&p| self.run_cell(resolved.for_protocol(p), method, budget, seeds))
                        .collect(),
                    Err(e) => protocols
                        .iter()
                        .map(|&p| Cell {
                            protocol: p,
                            method,
                            budget_dbm: budget,
                            thresholds: Vec::new(),
                            runs: Vec::new(),
                            error: Some(e.to_string()),
                        })
                        .collect(),
                })
                .collect()
        });
        let mut cells: Vec<Cell> = per_budget.into_iter().flatten().collect();
        cells.sort_by(|a, b| {
            a.protocol
                .cmp(&b.protocol)
                .then(a.budget_dbm.total_cmp(&b.budget_dbm))
        });
        Ok(ExperimentResult {
            cells,
            scan_duration: self.world.scan_duration,
        })
    }

    /// MAP versus optimized thresholds per protocol and budget, both
    /// evaluated on the optimizer's evaluation seeds.
    pub fn compare_thresholding(
        &self,
        protocols: &[ProtocolKind],
        budgets: &[f64],
    ) -> Result<ThresholdComparison, HarnessError> {
        let protocols: Vec<ProtocolKind> = protocols
            .iter()
            .copied()
            .filter(|p| *p != ProtocolKind::Openloop)
            .collect();
        let jobs: Vec<(ProtocolKind, f64)> = protocols
            .iter()
            .flat_map(|&p| budgets.iter().map(move |&b| (p, b)))
            .collect();
        let seeds = self.cfg.optimizer.eval_seeds.clone();
        let pool = worker_pool()?;
        let outcomes: Vec<Result<IptOutcome, HarnessError>> =
            pool.install(|| jobs.par_iter().map(|&(p, b)| self.optimize(p, b)).collect());
        let mut cells = Vec::new();
        let mut optimizations = Vec::new();
        for ((protocol, budget), outcome) in jobs.into_iter().zip(outcomes) {
            match outcome {
                Ok(o) => {
                    for (method, values) in [
                        (ThresholdMethod::Map, &o.map),
                        (ThresholdMethod::Ipt, &o.ipt),
                    ] {
                        let th = self.protocol_thresholds(protocol, values)?;
                        cells.push(self.run_cell(th, method, budget, &seeds));
                    }
                    optimizations.push(o);
                }
                Err(e) => {
                    for method in [ThresholdMethod::Map, ThresholdMethod::Ipt] {
                        cells.push(Cell {
                            protocol,
                            method,
                            budget_dbm: budget,
                            thresholds: Vec::new(),
                            runs: Vec::new(),
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
        }
        Ok(ThresholdComparison {
            result: ExperimentResult {
                cells,
                scan_duration: self.world.scan_duration,
            },
            optimizations,
        })
    }
}

/// One-shot run that builds its own [`Simulator`].
pub fn run_scenario(
    cfg: &SimConfig,
    thresholds: ProtocolThresholds,
    budget_dbm: f64,
    seed: u64,
) -> Result<ScenarioTrace, HarnessError> {
    Simulator::new(cfg.clone())?.run(thresholds, budget_dbm, seed)
}
