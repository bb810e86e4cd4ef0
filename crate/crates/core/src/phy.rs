//! Per-subcarrier transmit model, Doppler, and the received echo frame.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{subcarrier_phase, ChannelVector, SPEED_OF_LIGHT};

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid power allocation: {0}")]
    Power(String),
    #[error("invalid OFDM configuration: {0}")]
    Config(String),
}

/// OFDM numerology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    /// Carrier frequency f_c, Hz.
    pub carrier_hz: f64,
    /// Subcarrier bandwidth W_c, Hz. Sets the per-sample noise bandwidth.
    pub subcarrier_bw_hz: f64,
    pub n_sub: usize,
    /// Subcarrier spacing W_sub, Hz.
    pub subcarrier_spacing_hz: f64,
    pub n_sym: usize,
    /// Symbol duration T_sym, s.
    pub symbol_duration_s: f64,
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("subcarrier_bw_hz", self.subcarrier_bw_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("symbol_duration_s", self.symbol_duration_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PhyError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.n_sub == 0 || self.n_sym == 0 {
            return Err(PhyError::Config("n_sub and n_sym must be >= 1".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Duration of one scan (one OFDM frame), `N_sym·T_sym`.
    pub fn scan_duration(&self) -> f64 {
        self.n_sym as f64 * self.symbol_duration_s
    }

    /// Length of the concatenated received vector, `N_sym·N_sub`.
    pub fn frame_len(&self) -> usize {
        self.n_sym * self.n_sub
    }
}

/// Per-subcarrier radiated power and the beam power split.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    /// P_q, watts per subcarrier.
    pub per_subcarrier_w: f64,
    /// `L` communication coefficients followed by the sensing coefficient.
    pub gamma: Vec<f64>,
}

impl PowerAllocation {
    /// Splits a sensing power and a communication power (both watts, summed
    /// over all subcarriers) into P_q and γ. Communication power is shared
    /// evenly among `n_comm` beams.
    pub fn from_budget(sensing_w: f64, comm_w: f64, n_comm: usize, n_sub: usize) -> Self {
        let comm_w = if n_comm == 0 { 0.0 } else { comm_w };
        let total = sensing_w + comm_w;
        let mut gamma = vec![(comm_w / n_comm.max(1) as f64 / total).sqrt(); n_comm];
        gamma.push((sensing_w / total).sqrt());
        Self {
            per_subcarrier_w: total / n_sub as f64,
            gamma,
        }
    }

    /// Fraction of radiated power carried by the sensing beam.
    pub fn sensing_share(&self) -> f64 {
        let total: f64 = self.gamma.iter().map(|g| g * g).sum();
        self.gamma.last().map_or(0.0, |g| g * g / total)
    }
}

/// Beamforming matrix `F = [γ_1 f_1, …, γ_L f_L, γ_s f_s]`, stored by column.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingMatrix {
    pub n_antennas: usize,
    pub columns: Vec<Vec<Complex64>>,
}

impl BeamformingMatrix {
    /// `tr(F F^H)`, i.e. the total squared Frobenius norm.
    pub fn trace_power(&self) -> f64 {
        self.columns.iter().flatten().map(|c| c.norm_sqr()).sum()
    }

    pub fn column_power(&self, i: usize) -> f64 {
        self.columns[i].iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn n_streams(&self) -> usize {
        self.columns.len()
    }
}

/// Builds `F` from per-stream steering vectors (`L` comm beams then the
/// sensing beam) and their γ weights, normalized to `tr(F F^H) = 1`.
pub fn build_beamforming(
    steering: &[Vec<Complex64>],
    gamma: &[f64],
) -> Result<BeamformingMatrix, PhyError> {
    if steering.is_empty() || steering.len() != gamma.len() {
        return Err(PhyError::Dimension(format!(
            "{} steering vectors for {} gamma coefficients",
            steering.len(),
            gamma.len()
        )));
    }
    let n = steering[0].len();
    if n == 0 || steering.iter().any(|s| s.len() != n) {
        return Err(PhyError::Dimension(
            "steering vectors must share a nonzero length".into(),
        ));
    }
    if gamma.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(PhyError::Power(
            "gamma coefficients must be finite and non-negative".into(),
        ));
    }
    let norm: f64 = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(PhyError::Power("all gamma coefficients are zero".into()));
    }
    let columns = steering
        .iter()
        .zip(gamma)
        .map(|(s, g)| {
            let w = g / norm / (n as f64).sqrt();
            s.iter().map(|a| a * w).collect()
        })
        .collect();
    Ok(BeamformingMatrix {
        n_antennas: n,
        columns,
    })
}

/// Symbol matrix `X_q`, `(L+1) × N_sym`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMatrix {
    pub rows: usize,
    pub n_sym: usize,
    pub data: Vec<Complex64>,
}

impl SymbolMatrix {
    pub fn zeros(rows: usize, n_sym: usize) -> Self {
        Self {
            rows,
            n_sym,
            data: vec![Complex64::new(0.0, 0.0); rows * n_sym],
        }
    }

    /// Unit-modulus QPSK symbols drawn from `rng`.
    pub fn qpsk<R: Rng + ?Sized>(rng: &mut R, rows: usize, n_sym: usize) -> Self {
        let data = (0..rows * n_sym)
            .map(|_| {
                let bits: u8 = rng.random_range(0..4);
                let re = if bits & 1 == 0 {
                    FRAC_1_SQRT_2
                } else {
                    -FRAC_1_SQRT_2
                };
                let im = if bits & 2 == 0 {
                    FRAC_1_SQRT_2
                } else {
                    -FRAC_1_SQRT_2
                };
                Complex64::new(re, im)
            })
            .collect();
        Self { rows, n_sym, data }
    }

    pub fn get(&self, row: usize, n: usize) -> Complex64 {
        self.data[row * self.n_sym + n]
    }
}

/// Transmit frame `S_q`, `N_BS × N_sym`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TxFrame {
    pub n_antennas: usize,
    pub n_sym: usize,
    pub data: Vec<Complex64>,
}

impl TxFrame {
    pub fn get(&self, antenna: usize, n: usize) -> Complex64 {
        self.data[antenna * self.n_sym + n]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// `S_q = √P_q · F · X_q`.
pub fn transmit_frame(
    p_q: f64,
    f: &BeamformingMatrix,
    x: &SymbolMatrix,
) -> Result<TxFrame, PhyError> {
    if x.rows != f.n_streams() {
        return Err(PhyError::Dimension(format!(
            "F has {} streams but X has {} rows",
            f.n_streams(),
            x.rows
        )));
    }
    let amp = p_q.sqrt();
    let mut data = vec![Complex64::new(0.0, 0.0); f.n_antennas * x.n_sym];
    for (l, col) in f.columns.iter().enumerate() {
        let row = &x.data[l * x.n_sym..(l + 1) * x.n_sym];
        for (a, fa) in col.iter().enumerate() {
            let w = fa * amp;
            let out = &mut data[a * x.n_sym..(a + 1) * x.n_sym];
            for (o, s) in out.iter_mut().zip(row) {
                *o += w * s;
            }
        }
    }
    Ok(TxFrame {
        n_antennas: f.n_antennas,
        n_sym: x.n_sym,
        data,
    })
}

/// Symbol-domain Doppler phase ramp `exp(−j2πν·n·T_sym)`, `n = 1..N_sym`.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerVector {
    pub entries: Vec<Complex64>,
    pub shift_hz: f64,
}

pub fn doppler_vector(shift_hz: f64, n_sym: usize, t_sym: f64) -> DopplerVector {
    let entries = (1..=n_sym)
        .map(|n| Complex64::from_polar(1.0, -2.0 * PI * shift_hz * n as f64 * t_sym))
        .collect();
    DopplerVector { entries, shift_hz }
}

/// Everything needed to synthesize one target's echo across subcarriers.
/// Channel vectors are indexed by `q − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEcho {
    pub bs: Vec<ChannelVector>,
    pub ue_los: Vec<ChannelVector>,
    pub ue_nlos: Vec<ChannelVector>,
    pub doppler_los: DopplerVector,
    pub doppler_nlos: DopplerVector,
}

/// Concatenated received vector `r = [r_1; …; r_Nsub]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    pub samples: Vec<Complex64>,
    pub scan: usize,
    pub beam: usize,
    /// Per-sample noise standard deviation σ_z.
    pub noise_sigma: f64,
}

/// Circularly-symmetric Gaussian noise drawn from an injected generator.
pub struct NoiseInjection<'a, R: Rng + ?Sized> {
    pub rng: &'a mut R,
    pub sigma: f64,
}

/// Draws one `CN(0, σ²)` sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Complex64 {
    let s = sigma * FRAC_1_SQRT_2;
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Forward gain of the BS→target leg for one transmitted snapshot.
///
/// The spatial part is `α^H s`; the delay term keeps its propagation sign
/// `exp(−j2π(q−1)W_sub·τ_BS)` so that the echo's subcarrier phase ramp follows
/// the total BS→target→UE path delay.
fn bs_leg_phase_fix(h: &ChannelVector, spacing_hz: f64) -> Complex64 {
    let p = subcarrier_phase(h.subcarrier, spacing_hz, h.delay);
    p * p
}

/// Synthesizes the received frame for one scan:
///
/// `r_q = Σ_m ψ_LOS ⊙ (w^H h_UE,LOS)(h_BS^H S_q) + ψ_NLOS ⊙ (w^H h_UE,NLOS)(h_BS^H S_q) + z_q`.
///
/// `tx[q-1]` is `S_q`. Noise is appended last, in sample order, when
/// `noise` is given.
pub fn received_frame<R: Rng + ?Sized>(
    cfg: &OfdmConfig,
    echoes: &[TargetEcho],
    tx: &[TxFrame],
    w_ue: &[Complex64],
    noise: Option<NoiseInjection<'_, R>>,
    scan: usize,
    beam: usize,
) -> Result<ReceivedFrame, PhyError> {
    let n_sym = cfg.n_sym;
    if tx.len() != cfg.n_sub {
        return Err(PhyError::Dimension(format!(
            "{} tx frames for {} subcarriers",
            tx.len(),
            cfg.n_sub
        )));
    }
    let mut samples = vec![Complex64::new(0.0, 0.0); cfg.frame_len()];
    for echo in echoes {
        for dv in [&echo.doppler_los, &echo.doppler_nlos] {
            if dv.entries.len() != n_sym {
                return Err(PhyError::Dimension("doppler vector length != N_sym".into()));
            }
        }
        if echo.bs.len() != cfg.n_sub
            || echo.ue_los.len() != cfg.n_sub
            || echo.ue_nlos.len() != cfg.n_sub
        {
            return Err(PhyError::Dimension(
                "channel vectors must be supplied for every subcarrier".into(),
            ));
        }
        for (qi, s_q) in tx.iter().enumerate() {
            if s_q.n_sym != n_sym {
                return Err(PhyError::Dimension("tx frame length != N_sym".into()));
            }
            let h_bs = &echo.bs[qi];
            if h_bs.coeffs.len() != s_q.n_antennas {
                return Err(PhyError::Dimension(format!(
                    "BS channel has {} entries, S_q has {} rows",
                    h_bs.coeffs.len(),
                    s_q.n_antennas
                )));
            }
            let los = &echo.ue_los[qi];
            let nlos = &echo.ue_nlos[qi];
            if los.coeffs.len() != w_ue.len() || nlos.coeffs.len() != w_ue.len() {
                return Err(PhyError::Dimension(
                    "UE channel length != w_UE length".into(),
                ));
            }
            let w_los: Complex64 = w_ue
                .iter()
                .zip(&los.coeffs)
                .map(|(w, h)| w.conj() * h)
                .sum();
            let w_nlos: Complex64 = w_ue
                .iter()
                .zip(&nlos.coeffs)
                .map(|(w, h)| w.conj() * h)
                .sum();
            let fix = bs_leg_phase_fix(h_bs, cfg.subcarrier_spacing_hz);

            let out = &mut samples[qi * n_sym..(qi + 1) * n_sym];
            for (n, o) in out.iter_mut().enumerate() {
                let mut fwd = Complex64::new(0.0, 0.0);
                for (a, h) in h_bs.coeffs.iter().enumerate() {
                    fwd += h.conj() * s_q.data[a * n_sym + n];
                }
                fwd *= fix;
                *o += echo.doppler_los.entries[n] * w_los * fwd
                    + echo.doppler_nlos.entries[n] * w_nlos * fwd;
            }
        }
    }
    let mut noise_sigma = 0.0;
    if let Some(NoiseInjection { rng, sigma }) = noise {
        noise_sigma = sigma;
        for s in samples.iter_mut() {
            *s += complex_gaussian(rng, sigma);
        }
    }
    Ok(ReceivedFrame {
        samples,
        scan,
        beam,
        noise_sigma,
    })
}

/// Per-sample thermal noise standard deviation, `σ_z² = k_B·T·B·10^(NF/10)`.
pub fn noise_sigma(noise_figure_db: f64, bandwidth_hz: f64, temperature_k: f64) -> f64 {
    (BOLTZMANN * temperature_k * bandwidth_hz * 10f64.powf(noise_figure_db / 10.0)).sqrt()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}
