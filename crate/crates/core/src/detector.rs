//! Delay-Doppler matched filtering and the reflected echo strength
//! indicator (RESI).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::SPEED_OF_LIGHT;
use crate::phy::{OfdmConfig, ReceivedFrame};
use crate::scene::{Scene, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("degenerate grid bounds: {0}")]
    Bounds(String),
    #[error("noise sigma must be positive, got {0}")]
    NoiseSigma(f64),
    #[error("frame length {got} does not match N_sym*N_sub = {expected}")]
    FrameLength { got: usize, expected: usize },
}

/// Delay and Doppler hypotheses searched by the matched filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayDopplerGrid {
    /// Seconds, strictly increasing.
    pub delays: Vec<f64>,
    /// Hz, strictly increasing.
    pub dopplers: Vec<f64>,
}

impl DelayDopplerGrid {
    pub fn n_bins(&self) -> usize {
        self.delays.len() * self.dopplers.len()
    }
}

/// Outcome of one scan's detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResiMeasurement {
    pub resi: f64,
    pub delay: f64,
    pub doppler: f64,
    pub delay_idx: usize,
    pub doppler_idx: usize,
    pub beam: usize,
    pub scan: usize,
}

/// Min/max total BS→target→UE path delay over the sensing region, both the
/// direct and the scatterer-bounced route, for targets at `height`.
///
/// The region is sampled on a polar mesh that includes its boundary.
pub fn region_delay_span(scene: &Scene, height: f64, mesh: usize) -> (f64, f64) {
    let region = &scene.region;
    let mesh = mesh.max(2);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mp = scene.scatterer.position;
    let d_mp_ue = mp.distance(scene.ue);
    for i in 0..mesh {
        let az = region.az_lo + (region.az_hi - region.az_lo) * i as f64 / (mesh - 1) as f64;
        for j in 0..mesh {
            let r = region.r_lo + (region.r_hi - region.r_lo) * j as f64 / (mesh - 1) as f64;
            let p = Vec3::new(scene.bs.x + r * az.cos(), scene.bs.y + r * az.sin(), height);
            let d_bs = scene.bs.distance(p);
            let direct = d_bs + p.distance(scene.ue);
            let bounced = d_bs + p.distance(mp) + d_mp_ue;
            lo = lo.min(direct).min(bounced);
            hi = hi.max(direct).max(bounced);
        }
    }
    (lo / SPEED_OF_LIGHT, hi / SPEED_OF_LIGHT)
}

fn uniform_bins(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 || hi == lo {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Builds the delay-Doppler grid: `n_del` delay bins spanning
/// `delay_span` and `n_dop` Doppler bins spanning `±(2·v_max/λ + ν_d)`.
/// A zero-width span collapses to a single bin.
pub fn build_grid(
    delay_span: (f64, f64),
    v_max: f64,
    nu_d: f64,
    n_del: usize,
    n_dop: usize,
    cfg: &OfdmConfig,
) -> Result<DelayDopplerGrid, DetectorError> {
    let (lo, hi) = delay_span;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < 0.0 {
        return Err(DetectorError::Bounds(format!("delay span [{lo}, {hi}]")));
    }
    if !(v_max >= 0.0) || !v_max.is_finite() || !nu_d.is_finite() {
        return Err(DetectorError::Bounds(format!(
            "velocity bound {v_max}, doppler offset {nu_d}"
        )));
    }
    if n_del == 0 || n_dop == 0 {
        return Err(DetectorError::Bounds(
            "grid needs at least one bin per axis".into(),
        ));
    }
    let nu_max = 2.0 * v_max / cfg.wavelength() + nu_d.abs();
    Ok(DelayDopplerGrid {
        delays: uniform_bins(lo, hi, n_del),
        dopplers: uniform_bins(-nu_max, nu_max, n_dop),
    })
}

/// Matched filter `g(τ, ν)`: segment `q`, symbol `n` holds
/// `exp(−j2π(q−1)W_sub·τ)·exp(−j2πν·n·T_sym)`.
pub fn filter_vector(delay: f64, doppler: f64, cfg: &OfdmConfig) -> Vec<Complex64> {
    let mut g = Vec::with_capacity(cfg.frame_len());
    for q in 0..cfg.n_sub {
        let dq = Complex64::from_polar(
            1.0,
            -2.0 * PI * q as f64 * cfg.subcarrier_spacing_hz * delay,
        );
        for n in 1..=cfg.n_sym {
            g.push(
                dq * Complex64::from_polar(
                    1.0,
                    -2.0 * PI * doppler * n as f64 * cfg.symbol_duration_s,
                ),
            );
        }
    }
    g
}

/// Strongest delay-Doppler bin of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub delay_idx: usize,
    pub doppler_idx: usize,
    pub delay: f64,
    pub doppler: f64,
    /// `|r^H g(τ*, ν*)|`.
    pub magnitude: f64,
}

/// Precomputed phase tables for exhaustive grid search.
///
/// `r^H g(τ,ν)` factors as `Σ_q e^{−j2π(q−1)W τ} Σ_n conj(r_qn) e^{−j2πν n T}`,
/// so each frame costs one `N_dop × N_sub × N_sym` pass plus the delay
/// combination.
#[derive(Debug, Clone)]
pub struct MatchedFilterBank {
    grid: DelayDopplerGrid,
    n_sub: usize,
    n_sym: usize,
    /// `[doppler][n]`
    doppler_phase: Vec<Complex64>,
    /// `[delay][q]`
    delay_phase: Vec<Complex64>,
}

impl MatchedFilterBank {
    pub fn new(grid: DelayDopplerGrid, cfg: &OfdmConfig) -> Self {
        let doppler_phase = grid
            .dopplers
            .iter()
            .flat_map(|nu| {
                (1..=cfg.n_sym).map(move |n| {
                    Complex64::from_polar(1.0, -2.0 * PI * nu * n as f64 * cfg.symbol_duration_s)
                })
            })
            .collect();
        let delay_phase = grid
            .delays
            .iter()
            .flat_map(|tau| {
                (0..cfg.n_sub).map(move |q| {
                    Complex64::from_polar(
                        1.0,
                        -2.0 * PI * q as f64 * cfg.subcarrier_spacing_hz * tau,
                    )
                })
            })
            .collect();
        Self {
            grid,
            n_sub: cfg.n_sub,
            n_sym: cfg.n_sym,
            doppler_phase,
            delay_phase,
        }
    }

    pub fn grid(&self) -> &DelayDopplerGrid {
        &self.grid
    }

    pub fn frame_len(&self) -> usize {
        self.n_sub * self.n_sym
    }

    /// `r^H g(τ, ν)` for every bin, delay-major (`index = t·N_dop + d`).
    pub fn project(&self, r: &[Complex64]) -> Result<Vec<Complex64>, DetectorError> {
        if r.len() != self.frame_len() {
            return Err(DetectorError::FrameLength {
                got: r.len(),
                expected: self.frame_len(),
            });
        }
        let n_dop = self.grid.dopplers.len();
        // partial[d][q] = Σ_n conj(r_qn)·doppler_phase[d][n]
        let mut partial = vec![Complex64::new(0.0, 0.0); n_dop * self.n_sub];
        for d in 0..n_dop {
            let dp = &self.doppler_phase[d * self.n_sym..(d + 1) * self.n_sym];
            for q in 0..self.n_sub {
                let seg = &r[q * self.n_sym..(q + 1) * self.n_sym];
                partial[d * self.n_sub + q] = seg.iter().zip(dp).map(|(x, p)| x.conj() * p).sum();
            }
        }
        let mut out = Vec::with_capacity(self.grid.n_bins());
        for t in 0..self.grid.delays.len() {
            let tp = &self.delay_phase[t * self.n_sub..(t + 1) * self.n_sub];
            for d in 0..n_dop {
                out.push(
                    partial[d * self.n_sub..(d + 1) * self.n_sub]
                        .iter()
                        .zip(tp)
                        .map(|(a, p)| a * p)
                        .sum(),
                );
            }
        }
        Ok(out)
    }

    /// Picks the strongest bin from precomputed projections (see
    /// [`Self::project`]); ties resolve to the lowest delay index, then
    /// the lowest Doppler index.
    pub fn select(&self, magnitudes: impl IntoIterator<Item = f64>) -> Peak {
        let n_dop = self.grid.dopplers.len();
        let mut best_idx = 0;
        let mut best = -1.0;
        for (i, mag) in magnitudes.into_iter().enumerate() {
            if mag > best {
                best = mag;
                best_idx = i;
            }
        }
        let (t, d) = (best_idx / n_dop, best_idx % n_dop);
        Peak {
            delay_idx: t,
            doppler_idx: d,
            delay: self.grid.delays[t],
            doppler: self.grid.dopplers[d],
            magnitude: best,
        }
    }

    /// Argmax of `|r^H g(τ, ν)|` over the whole grid. Ties resolve to the
    /// lowest delay index, then the lowest Doppler index.
    pub fn peak(&self, r: &[Complex64]) -> Result<Peak, DetectorError> {
        let proj = self.project(r)?;
        Ok(self.select(proj.iter().map(|c| c.norm())))
    }

    /// Runs the filter bank on a frame and normalizes the peak into a RESI.
    pub fn measure(
        &self,
        frame: &ReceivedFrame,
        noise_sigma: f64,
    ) -> Result<ResiMeasurement, DetectorError> {
        let peak = self.peak(&frame.samples)?;
        let resi = resi_from_magnitude(peak.magnitude, self.frame_len(), noise_sigma)?;
        Ok(ResiMeasurement {
            resi,
            delay: peak.delay,
            doppler: peak.doppler,
            delay_idx: peak.delay_idx,
            doppler_idx: peak.doppler_idx,
            beam: frame.beam,
            scan: frame.scan,
        })
    }
}

/// One-shot form of [`MatchedFilterBank::peak`].
pub fn matched_filter_peak(
    r: &[Complex64],
    grid: &DelayDopplerGrid,
    cfg: &OfdmConfig,
) -> Result<Peak, DetectorError> {
    MatchedFilterBank::new(grid.clone(), cfg).peak(r)
}

/// `|r^H g| / √(N_sub·N_sym·σ_z²)` where `N_sub·N_sym = len(r)`.
pub fn compute_resi(
    r: &[Complex64],
    g_star: &[Complex64],
    noise_sigma: f64,
) -> Result<f64, DetectorError> {
    if r.len() != g_star.len() {
        return Err(DetectorError::FrameLength {
            got: r.len(),
            expected: g_star.len(),
        });
    }
    let ip: Complex64 = r.iter().zip(g_star).map(|(x, g)| x.conj() * g).sum();
    resi_from_magnitude(ip.norm(), r.len(), noise_sigma)
}

pub fn resi_from_magnitude(
    magnitude: f64,
    n: usize,
    noise_sigma: f64,
) -> Result<f64, DetectorError> {
    if !(noise_sigma > 0.0) {
        return Err(DetectorError::NoiseSigma(noise_sigma));
    }
    Ok(magnitude / (n as f64 * noise_sigma * noise_sigma).sqrt())
}
