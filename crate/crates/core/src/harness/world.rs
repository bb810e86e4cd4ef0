//! Per-configuration precomputation.
//!
//! The echo of every scan is linear in the transmit amplitude, and the
//! UE knows the unit-modulus sensing symbols it strips before filtering,
//! so the filter-bank output for a scan is `√P·S[scan, beam] + Z[seed, scan]`.
//! [`World`] holds `S` for a unit-power transmission on every beam and
//! [`NoiseBank`] holds `Z` for one seed. [`synthesize_frame`] runs the
//! same scan through the full transmit/receive chain.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::SimConfig;
use super::HarnessError;
use crate::channel::{
    bs_target_channel, steering_vector, target_ue_channel, ArrayGeometry, TargetPoint,
};
use crate::detector::{build_grid, region_delay_span, DelayDopplerGrid, MatchedFilterBank, Peak};
use crate::feedback::Hypothesis;
use crate::phy::{
    build_beamforming, complex_gaussian, doppler_vector, noise_sigma, received_frame,
    transmit_frame, BeamformingMatrix, NoiseInjection, OfdmConfig, ReceivedFrame, SymbolMatrix,
    TargetEcho, TxFrame,
};
use crate::scene::{beam_containing, build_beam_grid, BeamGrid, Scene, SceneState, Vec3};

/// Random stream for one scan: symbols first, then noise in sample order.
pub fn scan_rng(seed: u64, scan: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scan as u64);
    rng
}

/// Echo descriptions for every target of one scan.
pub fn scan_echoes(cfg: &SimConfig, state: &SceneState) -> Result<Vec<TargetEcho>, HarnessError> {
    let ofdm = cfg.ofdm();
    let lambda = ofdm.wavelength();
    let scene = &cfg.scene;
    let mut echoes = Vec::with_capacity(state.positions.len());
    for (i, target) in scene.targets.iter().enumerate() {
        let pos = state.positions[i];
        let vel = state.velocities[i];
        let point = TargetPoint {
            position: pos,
            rcs: target.rcs,
        };
        let mut bs = Vec::with_capacity(ofdm.n_sub);
        let mut ue_los = Vec::with_capacity(ofdm.n_sub);
        let mut ue_nlos = Vec::with_capacity(ofdm.n_sub);
        for q in 1..=ofdm.n_sub {
            bs.push(bs_target_channel(
                q,
                &cfg.channel.bs_array,
                scene.bs,
                pos,
                lambda,
                ofdm.subcarrier_spacing_hz,
            )?);
            let (los, nlos) = target_ue_channel(
                q,
                &cfg.channel.ue_array,
                scene.ue,
                point,
                &scene.scatterer,
                state.blocked[i],
                lambda,
                ofdm.subcarrier_spacing_hz,
            )?;
            ue_los.push(los);
            ue_nlos.push(nlos);
        }
        let nu_nlos = (radial_rate(pos, vel, scene.bs)
            + radial_rate(pos, vel, scene.scatterer.position))
            / lambda;
        let nu_los = nu_nlos + cfg.phy.doppler_offset_hz;
        echoes.push(TargetEcho {
            bs,
            ue_los,
            ue_nlos,
            doppler_los: doppler_vector(nu_los, ofdm.n_sym, ofdm.symbol_duration_s),
            doppler_nlos: doppler_vector(nu_nlos, ofdm.n_sym, ofdm.symbol_duration_s),
        });
    }
    Ok(echoes)
}

/// Rate of change of the distance between a moving point and a fixed one.
fn radial_rate(p: Vec3, v: Vec3, fixed: Vec3) -> f64 {
    let d = p - fixed;
    let n = d.norm();
    if n == 0.0 {
        0.0
    } else {
        v.dot(d) / n
    }
}

/// Unit-norm receive combiner pointed at the region centroid.
pub fn ue_combiner(cfg: &SimConfig) -> Vec<Complex64> {
    let height = cfg
        .scene
        .targets
        .first()
        .map_or(0.0, |t| t.trajectory.start.z);
    let centroid = cfg.scene.region_centroid(height);
    let geom: &ArrayGeometry = &cfg.channel.ue_array;
    let a = steering_vector(geom, geom.local_angle_to(cfg.scene.ue, centroid));
    let norm = (a.len() as f64).sqrt();
    a.into_iter().map(|c| c / norm).collect()
}

/// Sensing-only beamformer for one beam of the grid.
pub fn beam_former(
    cfg: &SimConfig,
    grid: &BeamGrid,
    beam: usize,
) -> Result<BeamformingMatrix, HarnessError> {
    let geom = &cfg.channel.bs_array;
    let steer = steering_vector(geom, geom.local_angle(grid.centers[beam]));
    Ok(build_beamforming(&[steer], &[1.0])?)
}

/// Filter-bank output of the noise (with symbols stripped) for every scan
/// of one seed, `[scan][bin]`.
#[derive(Debug, Clone)]
pub struct NoiseBank {
    pub seed: u64,
    values: Vec<Complex64>,
    n_bins: usize,
}

impl NoiseBank {
    pub fn scan(&self, scan: usize) -> &[Complex64] {
        &self.values[scan * self.n_bins..(scan + 1) * self.n_bins]
    }
}

/// One filtered scan: the strongest bin and its RESI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanMeasurement {
    pub peak: Peak,
    pub resi: f64,
}

#[derive(Debug, Clone)]
pub struct World {
    pub n_scans: usize,
    pub n_beam: usize,
    pub scan_duration: f64,
    pub noise_sigma: f64,
    pub beams: BeamGrid,
    pub grid: DelayDopplerGrid,
    ofdm: OfdmConfig,
    bank: MatchedFilterBank,
    in_region: Vec<bool>,
    target_beams: Vec<Vec<usize>>,
    /// `[scan][beam][bin]` at 1 W total sensing power.
    signal: Vec<Complex64>,
    n_bins: usize,
}

fn delay_grid(cfg: &SimConfig) -> Result<DelayDopplerGrid, HarnessError> {
    let scene: &Scene = &cfg.scene;
    let height = scene.targets.first().map_or(0.0, |t| t.trajectory.start.z);
    let span = region_delay_span(scene, height, cfg.detector.delay_mesh);
    let v_max = scene
        .targets
        .iter()
        .map(|t| t.trajectory.max_speed(cfg.harness.duration_s))
        .fold(0.0, f64::max);
    Ok(build_grid(
        span,
        v_max,
        cfg.phy.doppler_offset_hz,
        cfg.detector.n_del,
        cfg.detector.n_dop,
        &cfg.ofdm(),
    )?)
}

impl World {
    pub fn build(cfg: &SimConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let ofdm = cfg.ofdm();
        let n_scans = cfg.n_scans();
        let scan_duration = ofdm.scan_duration();
        let beams = build_beam_grid(&cfg.scene.region)?;
        let n_beam = beams.len();
        let grid = delay_grid(cfg)?;
        let bank = MatchedFilterBank::new(grid.clone(), &ofdm);
        let n_bins = grid.n_bins();
        let w_ue = ue_combiner(cfg);
        let formers: Vec<BeamformingMatrix> = (0..n_beam)
            .map(|b| beam_former(cfg, &beams, b))
            .collect::<Result<_, _>>()?;
        let ones = SymbolMatrix {
            rows: 1,
            n_sym: ofdm.n_sym,
            data: vec![Complex64::new(1.0, 0.0); ofdm.n_sym],
        };
        let gain = 10f64.powf(cfg.phy.system_gain_db / 20.0);
        let p_q = 1.0 / ofdm.n_sub as f64;

        let mut in_region = Vec::with_capacity(n_scans);
        let mut target_beams = Vec::with_capacity(n_scans);
        let mut signal = Vec::with_capacity(n_scans * n_beam * n_bins);
        for scan in 0..n_scans {
            let state = cfg
                .scene
                .state_at(scan as f64 * scan_duration, cfg.harness.duration_s)?;
            in_region.push(
                state
                    .positions
                    .iter()
                    .any(|p| cfg.scene.region.contains(cfg.scene.bs, *p)),
            );
            let mut tb: Vec<usize> = state
                .positions
                .iter()
                .filter_map(|p| beam_containing(&beams, cfg.scene.bs, *p))
                .collect();
            tb.sort_unstable();
            tb.dedup();
            target_beams.push(tb);
            let echoes = scan_echoes(cfg, &state)?;
            for former in &formers {
                let tx: Vec<TxFrame> = (0..ofdm.n_sub)
                    .map(|_| transmit_frame(p_q, former, &ones))
                    .collect::<Result<_, _>>()?;
                let frame =
                    received_frame::<ChaCha8Rng>(&ofdm, &echoes, &tx, &w_ue, None, scan, 0)?;
                let scaled: Vec<Complex64> = frame.samples.iter().map(|s| s * gain).collect();
                signal.extend(bank.project(&scaled)?);
            }
        }
        Ok(World {
            n_scans,
            n_beam,
            scan_duration,
            noise_sigma: noise_sigma(
                cfg.phy.noise_figure_db,
                ofdm.subcarrier_bw_hz,
                cfg.phy.temperature_k,
            ),
            beams,
            grid,
            ofdm,
            bank,
            in_region,
            target_beams,
            signal,
            n_bins,
        })
    }

    pub fn ofdm(&self) -> &OfdmConfig {
        &self.ofdm
    }

    pub fn bank(&self) -> &MatchedFilterBank {
        &self.bank
    }

    pub fn in_region(&self, scan: usize) -> bool {
        self.in_region[scan]
    }

    pub fn target_in_beam(&self, scan: usize, beam: usize) -> bool {
        self.target_beams[scan].contains(&beam)
    }

    /// Ground-truth hypothesis for scanning `beam` at `scan`.
    pub fn label(&self, scan: usize, beam: usize) -> Hypothesis {
        let tb = &self.target_beams[scan];
        if tb.contains(&beam) {
            Hypothesis::H3
        } else if tb.iter().any(|&b| b.abs_diff(beam) == 1) {
            Hypothesis::H2
        } else if self.in_region[scan] {
            Hypothesis::H1
        } else {
            Hypothesis::H0
        }
    }

    /// Unit-power filter-bank output of the echo alone.
    pub fn signal(&self, scan: usize, beam: usize) -> &[Complex64] {
        let off = (scan * self.n_beam + beam) * self.n_bins;
        &self.signal[off..off + self.n_bins]
    }

    pub fn noise_bank(&self, seed: u64) -> NoiseBank {
        let n_sym = self.ofdm.n_sym;
        let n_sub = self.ofdm.n_sub;
        let mut values = Vec::with_capacity(self.n_scans * self.n_bins);
        let mut z = vec![Complex64::new(0.0, 0.0); n_sub * n_sym];
        for scan in 0..self.n_scans {
            let mut rng = scan_rng(seed, scan);
            let symbols: Vec<SymbolMatrix> = (0..n_sub)
                .map(|_| SymbolMatrix::qpsk(&mut rng, 1, n_sym))
                .collect();
            for (i, s) in z.iter_mut().enumerate() {
                let x = symbols[i / n_sym].data[i % n_sym];
                *s = complex_gaussian(&mut rng, self.noise_sigma) * x.conj();
            }
            values.extend(self.bank.project(&z).expect("frame length matches bank"));
        }
        NoiseBank {
            seed,
            values,
            n_bins: self.n_bins,
        }
    }

    /// Filters scan `scan` on `beam` at `power_w` total sensing power.
    pub fn measure(
        &self,
        scan: usize,
        beam: usize,
        power_w: f64,
        noise: &NoiseBank,
    ) -> ScanMeasurement {
        let amp = power_w.sqrt();
        let s = self.signal(scan, beam);
        let z = noise.scan(scan);
        let peak = self
            .bank
            .select(s.iter().zip(z).map(|(s, z)| (s * amp + z).norm()));
        let n = self.ofdm.frame_len() as f64;
        ScanMeasurement {
            peak,
            resi: peak.magnitude / (n * self.noise_sigma * self.noise_sigma).sqrt(),
        }
    }
}

/// Full-chain synthesis of one scan: QPSK symbols, `S_q = √P_q F X_q`,
/// echo plus noise at the UE, then removal of the known symbols.
pub fn synthesize_frame(
    cfg: &SimConfig,
    world: &World,
    scan: usize,
    beam: usize,
    power_w: f64,
    seed: u64,
) -> Result<ReceivedFrame, HarnessError> {
    let ofdm = cfg.ofdm();
    let state = cfg
        .scene
        .state_at(scan as f64 * world.scan_duration, cfg.harness.duration_s)?;
    let echoes = scan_echoes(cfg, &state)?;
    let former = beam_former(cfg, &world.beams, beam)?;
    let mut rng = scan_rng(seed, scan);
    let symbols: Vec<SymbolMatrix> = (0..ofdm.n_sub)
        .map(|_| SymbolMatrix::qpsk(&mut rng, 1, ofdm.n_sym))
        .collect();
    let p_q = power_w / ofdm.n_sub as f64;
    let tx: Vec<TxFrame> = symbols
        .iter()
        .map(|x| transmit_frame(p_q, &former, x))
        .collect::<Result<_, _>>()?;
    let gain = 10f64.powf(cfg.phy.system_gain_db / 20.0);
    let scaled: Vec<TargetEcho> = echoes
        .into_iter()
        .map(|mut e| {
            for h in e.ue_los.iter_mut().chain(e.ue_nlos.iter_mut()) {
                h.coeffs.iter_mut().for_each(|c| *c *= gain);
            }
            e
        })
        .collect();
    let mut frame = received_frame(
        &ofdm,
        &scaled,
        &tx,
        &ue_combiner(cfg),
        Some(NoiseInjection {
            rng: &mut rng,
            sigma: world.noise_sigma,
        }),
        scan,
        beam,
    )?;
    for (i, s) in frame.samples.iter_mut().enumerate() {
        *s *= symbols[i / ofdm.n_sym].data[i % ofdm.n_sym].conj();
    }
    Ok(frame)
}
