//! Simulation configuration: one TOML document with a section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::channel::ArrayGeometry;
use crate::feedback::{ControlSettings, RestartPolicy};
use crate::metrics::RatioBasis;
use crate::optimizer::OptimizerConfig;
use crate::phy::OfdmConfig;
use crate::scene::{
    Aabb, ScattererSpec, Scene, SensingRegion, TargetSpec, TrajectoryKind, TrajectorySpec, Vec3,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scene: Scene,
    pub channel: ChannelConfig,
    pub phy: PhyConfig,
    pub detector: DetectorConfig,
    pub feedback: FeedbackConfig,
    pub optimizer: OptimizerSettings,
    pub harness: HarnessConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub bs_array: ArrayGeometry,
    pub ue_array: ArrayGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhyConfig {
    pub carrier_hz: f64,
    pub subcarrier_bw_hz: f64,
    pub n_sub: usize,
    pub subcarrier_spacing_hz: f64,
    pub n_sym: usize,
    pub symbol_duration_s: f64,
    pub noise_figure_db: f64,
    pub temperature_k: f64,
    /// Lumped antenna-element and processing gain applied to every echo.
    pub system_gain_db: f64,
    /// Extra Doppler of the direct target→UE path over the bounced one, Hz.
    pub doppler_offset_hz: f64,
    /// Lowest sensing power a protocol may select, dBm.
    pub p_min_dbm: f64,
    /// Highest sensing power budget, dBm.
    pub p_max_dbm: f64,
}

impl PhyConfig {
    pub fn ofdm(&self) -> OfdmConfig {
        OfdmConfig {
            carrier_hz: self.carrier_hz,
            subcarrier_bw_hz: self.subcarrier_bw_hz,
            n_sub: self.n_sub,
            subcarrier_spacing_hz: self.subcarrier_spacing_hz,
            n_sym: self.n_sym,
            symbol_duration_s: self.symbol_duration_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub n_del: usize,
    pub n_dop: usize,
    /// Polar mesh resolution used to bound the region's path delays.
    pub delay_mesh: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMethod {
    /// Boundaries from an open-loop calibration run.
    #[default]
    Map,
    /// MAP start refined by the interior-point optimizer.
    Ipt,
    /// Thresholds given verbatim in the config.
    Fixed,
}

impl ThresholdMethod {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdMethod::Map => "map",
            ThresholdMethod::Ipt => "ipt",
            ThresholdMethod::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackConfig {
    pub step_down_db: f64,
    pub step_up_db: f64,
    #[serde(default)]
    pub restart: RestartPolicy,
    pub neighbor_memory_scans: usize,
    #[serde(default)]
    pub threshold_method: ThresholdMethod,
    /// `[η0, η1, η2]`, required when `threshold_method = "fixed"`.
    #[serde(default)]
    pub ssf_thresholds: Option<[f64; 3]>,
    /// `[η0, η1]`, required when `threshold_method = "fixed"`.
    #[serde(default)]
    pub earq_thresholds: Option<[f64; 2]>,
    /// RESI an open-loop in-beam scan must exceed to count as a detection;
    /// defaults to the SSF top threshold in force.
    #[serde(default)]
    pub openloop_detect: Option<f64>,
}

impl FeedbackConfig {
    pub fn control(&self) -> ControlSettings {
        ControlSettings {
            step_down_db: self.step_down_db,
            step_up_db: self.step_up_db,
            restart: self.restart,
            neighbor_memory_scans: self.neighbor_memory_scans,
        }
    }
}

/// Transmit power of the open-loop calibration runs behind the MAP fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationPower {
    /// `phy.p_min_dbm`, where the closed loops settle once they step down.
    #[default]
    Floor,
    /// The budget of the cell being evaluated.
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSettings {
    pub mu0: f64,
    pub tau_decay: f64,
    pub epsilon: f64,
    pub fd_step: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub max_backtracks: usize,
    /// Bounds are these multiples of the MAP starting thresholds.
    pub bound_lo_factor: f64,
    pub bound_hi_factor: f64,
    /// Common random numbers shared by every objective evaluation.
    pub eval_seeds: Vec<u64>,
    /// Seeds of the open-loop runs that feed the MAP fit.
    pub calibration_seeds: Vec<u64>,
    #[serde(default)]
    pub calibration_power: CalibrationPower,
}

impl OptimizerSettings {
    pub fn config_for(&self, start: &[f64]) -> OptimizerConfig {
        OptimizerConfig {
            mu0: self.mu0,
            tau_decay: self.tau_decay,
            epsilon: self.epsilon,
            fd_step: self.fd_step,
            max_iterations: self.max_iterations,
            t_min: start.iter().map(|t| t * self.bound_lo_factor).collect(),
            t_max: start.iter().map(|t| t * self.bound_hi_factor).collect(),
            initial_step: self.initial_step,
            max_backtracks: self.max_backtracks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    /// Scenario length T_S, seconds.
    pub duration_s: f64,
    pub seeds: Vec<u64>,
    /// Number of uniformly spaced budgets over `[p_min_dbm, p_max_dbm]`.
    pub budget_points: usize,
    /// Budget used by single runs, dBm.
    pub budget_dbm: f64,
    pub realloc_basis: RatioBasis,
}

impl Default for SimConfig {
    fn default() -> Self {
        let bs = Vec3::new(0.0, 0.0, 10.0);
        let ue = Vec3::new(0.0, 160.0, 1.5);
        SimConfig {
            scene: Scene {
                bs,
                ue,
                region: SensingRegion {
                    az_lo: std::f64::consts::FRAC_PI_4,
                    az_hi: 3.0 * std::f64::consts::FRAC_PI_4,
                    r_lo: 20.0,
                    r_hi: 32.0,
                    elevation: -0.14,
                    n_beam: 20,
                },
                targets: vec![TargetSpec {
                    trajectory: TrajectorySpec {
                        kind: TrajectoryKind::Linear,
                        start: Vec3::new(-17.0, 28.0, 1.5),
                        heading: 0.0,
                        speed: 2.0,
                    },
                    rcs: 1.0,
                }],
                scatterer: ScattererSpec {
                    position: Vec3::new(60.0, 90.0, 5.0),
                    rcs: 1e4,
                },
                blocker: Some(Aabb {
                    min: Vec3::new(-3.3, 99.5, 0.0),
                    max: Vec3::new(-3.0, 100.5, 6.0),
                }),
            },
            channel: ChannelConfig {
                bs_array: ArrayGeometry {
                    rows: 1,
                    cols: 32,
                    spacing: 0.5,
                    boresight: std::f64::consts::FRAC_PI_2,
                },
                ue_array: ArrayGeometry {
                    rows: 4,
                    cols: 4,
                    spacing: 0.5,
                    boresight: -std::f64::consts::FRAC_PI_2,
                },
            },
            phy: PhyConfig {
                carrier_hz: 24e9,
                subcarrier_bw_hz: 15e3,
                n_sub: 4,
                subcarrier_spacing_hz: 150e3,
                n_sym: 100,
                symbol_duration_s: 100e-6,
                noise_figure_db: 6.0,
                temperature_k: 290.0,
                system_gain_db: 65.0,
                doppler_offset_hz: 50.0,
                p_min_dbm: -20.0,
                p_max_dbm: -3.0,
            },
            detector: DetectorConfig {
                n_del: 10,
                n_dop: 10,
                delay_mesh: 64,
            },
            feedback: FeedbackConfig {
                step_down_db: 1.0,
                step_up_db: 2.0,
                restart: RestartPolicy::SweepStart,
                neighbor_memory_scans: 20,
                threshold_method: ThresholdMethod::Map,
                ssf_thresholds: None,
                earq_thresholds: None,
                openloop_detect: None,
            },
            optimizer: OptimizerSettings {
                mu0: 0.1,
                tau_decay: 0.5,
                epsilon: 1e-3,
                fd_step: 0.05,
                max_iterations: 40,
                initial_step: 1.0,
                max_backtracks: 12,
                bound_lo_factor: 0.5,
                bound_hi_factor: 2.0,
                eval_seeds: (101..=108).collect(),
                calibration_seeds: (201..=205).collect(),
                calibration_power: CalibrationPower::Floor,
            },
            harness: HarnessConfig {
                duration_s: 10.0,
                seeds: (1..=5).collect(),
                budget_points: 8,
                budget_dbm: -3.0,
                realloc_basis: RatioBasis::SensingBudget,
            },
        }
    }
}

fn field_err(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| field_err("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| field_err("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn ofdm(&self) -> OfdmConfig {
        self.phy.ofdm()
    }

    pub fn n_scans(&self) -> usize {
        (self.harness.duration_s / self.ofdm().scan_duration()).round() as usize
    }

    /// Uniform budget grid over `[p_min_dbm, p_max_dbm]`.
    pub fn budget_grid(&self) -> Vec<f64> {
        let n = self.harness.budget_points;
        let (lo, hi) = (self.phy.p_min_dbm, self.phy.p_max_dbm);
        if n == 1 {
            return vec![hi];
        }
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let h = &self.harness;
        self.ofdm()
            .validate()
            .map_err(|e| field_err("phy", e.to_string()))?;
        if let RatioBasis::TotalPower { total_dbm } = h.realloc_basis {
            if !(total_dbm.is_finite() && total_dbm >= self.phy.p_max_dbm) {
                return Err(field_err(
                    "harness.realloc_basis.total_dbm",
                    "must be finite and at least phy.p_max_dbm",
                ));
            }
        }
        if !(h.duration_s > 0.0) {
            return Err(field_err("harness.duration_s", "must be positive"));
        }
        let scans = h.duration_s / self.ofdm().scan_duration();
        if (scans - scans.round()).abs() > 1e-6 || scans.round() < 1.0 {
            return Err(field_err(
                "harness.duration_s",
                format!(
                    "must be a whole number of scans (n_sym·symbol_duration_s), got {scans} scans"
                ),
            ));
        }
        self.scene
            .validate(h.duration_s)
            .map_err(|e| field_err("scene", e.to_string()))?;
        if self.scene.targets.is_empty() {
            return Err(field_err(
                "scene.targets",
                "at least one target is required",
            ));
        }
        self.channel
            .bs_array
            .validate()
            .map_err(|e| field_err("channel.bs_array", e.to_string()))?;
        self.channel
            .ue_array
            .validate()
            .map_err(|e| field_err("channel.ue_array", e.to_string()))?;
        let p = &self.phy;
        for (name, v) in [
            ("phy.noise_figure_db", p.noise_figure_db),
            ("phy.system_gain_db", p.system_gain_db),
            ("phy.doppler_offset_hz", p.doppler_offset_hz),
            ("phy.p_min_dbm", p.p_min_dbm),
            ("phy.p_max_dbm", p.p_max_dbm),
        ] {
            if !v.is_finite() {
                return Err(field_err(name, "must be finite"));
            }
        }
        if !(p.temperature_k > 0.0) {
            return Err(field_err("phy.temperature_k", "must be positive"));
        }
        if p.p_min_dbm > p.p_max_dbm {
            return Err(field_err("phy.p_min_dbm", "must not exceed phy.p_max_dbm"));
        }
        if !(p.p_min_dbm..=p.p_max_dbm).contains(&h.budget_dbm) {
            return Err(field_err(
                "harness.budget_dbm",
                "must lie within [phy.p_min_dbm, phy.p_max_dbm]",
            ));
        }
        let d = &self.detector;
        if d.n_del == 0 || d.n_dop == 0 {
            return Err(field_err("detector", "n_del and n_dop must be >= 1"));
        }
        if d.delay_mesh < 2 {
            return Err(field_err("detector.delay_mesh", "must be >= 2"));
        }
        let f = &self.feedback;
        if !(f.step_down_db >= 0.0) || !(f.step_up_db >= 0.0) {
            return Err(field_err(
                "feedback.step_down_db",
                "power steps must be non-negative",
            ));
        }
        if f.threshold_method == ThresholdMethod::Fixed {
            match f.ssf_thresholds {
                Some(t) if t[0] < t[1] && t[1] < t[2] => {}
                Some(_) => {
                    return Err(field_err(
                        "feedback.ssf_thresholds",
                        "must be strictly increasing",
                    ))
                }
                None => {
                    return Err(field_err(
                        "feedback.ssf_thresholds",
                        "required for threshold_method = \"fixed\"",
                    ))
                }
            }
            match f.earq_thresholds {
                Some(t) if t[0] < t[1] => {}
                Some(_) => {
                    return Err(field_err(
                        "feedback.earq_thresholds",
                        "must be strictly increasing",
                    ))
                }
                None => {
                    return Err(field_err(
                        "feedback.earq_thresholds",
                        "required for threshold_method = \"fixed\"",
                    ))
                }
            }
        }
        let o = &self.optimizer;
        let probe = o.config_for(&[1.0, 2.0, 3.0]);
        probe
            .validate(3)
            .map_err(|e| field_err("optimizer", e.to_string()))?;
        if !(o.bound_lo_factor > 0.0 && o.bound_lo_factor <= 1.0 && o.bound_hi_factor >= 1.0) {
            return Err(field_err(
                "optimizer.bound_lo_factor",
                "need 0 < bound_lo_factor <= 1 <= bound_hi_factor",
            ));
        }
        if o.eval_seeds.is_empty() {
            return Err(field_err("optimizer.eval_seeds", "must not be empty"));
        }
        if o.calibration_seeds.is_empty() {
            return Err(field_err(
                "optimizer.calibration_seeds",
                "must not be empty",
            ));
        }
        if h.seeds.is_empty() {
            return Err(field_err("harness.seeds", "must not be empty"));
        }
        if h.budget_points == 0 {
            return Err(field_err("harness.budget_points", "must be >= 1"));
        }
        Ok(())
    }
}
