//! Far-field steering vectors, bistatic path loss and the per-subcarrier
//! BS→target and target→UE channel vectors.
//!
//! Angles handed to [`steering_vector`] are in the array's local frame
//! (azimuth measured from the array boresight). Geometry helpers on
//! [`ArrayGeometry`] convert global directions into that frame.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{ScattererSpec, Vec3};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("subcarrier index is 1-based, got {0}")]
    SubcarrierIndex(usize),
    #[error("invalid array geometry: {0}")]
    Geometry(String),
}

/// Two-dimensional direction `[azimuth, elevation]` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angle2D {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Angle2D {
    /// Builds an angle, wrapping azimuth into `[-π, π]` and clamping
    /// elevation into `[-π/2, π/2]`.
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self {
            azimuth: wrap_angle(azimuth),
            elevation: elevation.clamp(-PI / 2.0, PI / 2.0),
        }
    }

    /// Direction of `to` as seen from `from`.
    pub fn between(from: Vec3, to: Vec3) -> Self {
        let d = to - from;
        let horizontal = d.x.hypot(d.y);
        Self::new(d.y.atan2(d.x), d.z.atan2(horizontal))
    }
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI && a > 0.0 {
        w = PI;
    }
    w
}

/// Uniform planar array: `rows` elements stacked in elevation, `cols` along
/// azimuth, spaced `spacing` wavelengths apart, facing global azimuth
/// `boresight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing as a fraction of the wavelength.
    pub spacing: f64,
    /// Global azimuth (rad) of the array broadside.
    #[serde(default)]
    pub boresight: f64,
}

impl ArrayGeometry {
    pub fn new(
        rows: usize,
        cols: usize,
        spacing: f64,
        boresight: f64,
    ) -> Result<Self, ChannelError> {
        let g = Self {
            rows,
            cols,
            spacing,
            boresight,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ChannelError::Geometry(format!(
                "rows and cols must be >= 1, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.spacing > 0.0) {
            return Err(ChannelError::Geometry(format!(
                "spacing must be > 0, got {}",
                self.spacing
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Converts a global direction into the array's local frame.
    pub fn local_angle(&self, global: Angle2D) -> Angle2D {
        Angle2D::new(global.azimuth - self.boresight, global.elevation)
    }

    /// Local-frame direction from an array at `origin` towards `p`.
    pub fn local_angle_to(&self, origin: Vec3, p: Vec3) -> Angle2D {
        self.local_angle(Angle2D::between(origin, p))
    }
}

/// Far-field steering vector, row-major over `(row, col)`.
///
/// Element `(m, n)` carries phase `2π·d·(m·sin(el) + n·cos(el)·sin(az))`,
/// which is `π·(…)` for half-wavelength spacing.
pub fn steering_vector(geom: &ArrayGeometry, angle: Angle2D) -> Vec<Complex64> {
    let k = 2.0 * PI * geom.spacing;
    let u_el = angle.elevation.sin();
    let u_az = angle.elevation.cos() * angle.azimuth.sin();
    let mut out = Vec::with_capacity(geom.len());
    for m in 0..geom.rows {
        for n in 0..geom.cols {
            let phase = k * (m as f64 * u_el + n as f64 * u_az);
            out.push(Complex64::from_polar(1.0, phase));
        }
    }
    out
}

/// Power gain of a propagation leg (dimensionless), with the wavelength it
/// was evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    pub value: f64,
    pub wavelength: f64,
}

impl PathLoss {
    pub fn amplitude(&self) -> f64 {
        self.value.sqrt()
    }

    pub fn db(&self) -> f64 {
        10.0 * self.value.log10()
    }
}

fn positive(what: &'static str, value: f64) -> Result<f64, ChannelError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ChannelError::NonPositive { what, value })
    }
}

/// One-way free-space gain `λ²/(16π²d²)`.
pub fn friis_gain(wavelength: f64, distance: f64) -> Result<PathLoss, ChannelError> {
    let lambda = positive("wavelength", wavelength)?;
    let d = positive("distance", distance)?;
    Ok(PathLoss {
        value: lambda * lambda / (16.0 * PI * PI * d * d),
        wavelength: lambda,
    })
}

/// Target→UE gain on the direct path: `σ·λ²/(16π²d²)`.
pub fn bistatic_gain_los(
    wavelength: f64,
    target_rcs: f64,
    target_ue: f64,
) -> Result<PathLoss, ChannelError> {
    let sigma = positive("target rcs", target_rcs)?;
    let mut g = friis_gain(wavelength, target_ue)?;
    g.value *= sigma;
    Ok(g)
}

/// Target→scatterer→UE gain: `σ_m·σ_mp·λ⁴/(16²π⁴·d_tg_mp²·d_ue_mp²)`.
pub fn bistatic_gain_nlos(
    wavelength: f64,
    target_rcs: f64,
    scatterer_rcs: f64,
    target_scatterer: f64,
    ue_scatterer: f64,
) -> Result<PathLoss, ChannelError> {
    let lambda = positive("wavelength", wavelength)?;
    let s_m = positive("target rcs", target_rcs)?;
    let s_mp = positive("scatterer rcs", scatterer_rcs)?;
    let d1 = positive("target-scatterer distance", target_scatterer)?;
    let d2 = positive("ue-scatterer distance", ue_scatterer)?;
    let l2 = lambda * lambda;
    Ok(PathLoss {
        value: s_m * s_mp * l2 * l2 / (256.0 * PI.powi(4) * d1 * d1 * d2 * d2),
        wavelength: lambda,
    })
}

/// A channel vector on one subcarrier together with the path delay whose
/// phase ramp it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    pub coeffs: Vec<Complex64>,
    /// 1-based subcarrier index.
    pub subcarrier: usize,
    /// Propagation delay of the path, seconds.
    pub delay: f64,
    pub gain: PathLoss,
}

impl ChannelVector {
    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `self^H · v`.
    pub fn hermitian_dot(&self, v: &[Complex64]) -> Complex64 {
        self.coeffs.iter().zip(v).map(|(h, x)| h.conj() * x).sum()
    }
}

/// Subcarrier phase factor `exp(−j2π(q−1)·W_sub·τ)`.
pub fn subcarrier_phase(q: usize, spacing_hz: f64, delay: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * (q as f64 - 1.0) * spacing_hz * delay)
}

fn build_vector(
    q: usize,
    geom: &ArrayGeometry,
    angle: Angle2D,
    gain: PathLoss,
    spacing_hz: f64,
    delay: f64,
) -> ChannelVector {
    let scale = subcarrier_phase(q, spacing_hz, delay) * gain.amplitude();
    let coeffs = steering_vector(geom, angle)
        .into_iter()
        .map(|a| a * scale)
        .collect();
    ChannelVector {
        coeffs,
        subcarrier: q,
        delay,
        gain,
    }
}

/// BS→target channel on subcarrier `q` (1-based). The delay is the one-way
/// propagation time `d/c`.
pub fn bs_target_channel(
    q: usize,
    geom_bs: &ArrayGeometry,
    bs_pos: Vec3,
    target_pos: Vec3,
    wavelength: f64,
    spacing_hz: f64,
) -> Result<ChannelVector, ChannelError> {
    if q == 0 {
        return Err(ChannelError::SubcarrierIndex(q));
    }
    let d = bs_pos.distance(target_pos);
    let gain = friis_gain(wavelength, d)?;
    let angle = geom_bs.local_angle_to(bs_pos, target_pos);
    Ok(build_vector(
        q,
        geom_bs,
        angle,
        gain,
        spacing_hz,
        d / SPEED_OF_LIGHT,
    ))
}

/// Target state needed by the target→UE channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPoint {
    pub position: Vec3,
    pub rcs: f64,
}

/// Target→UE channel on subcarrier `q`, split into the direct (LOS) and the
/// scatterer-bounced (NLOS) components. `blocked` zeroes the LOS component
/// and leaves the NLOS one untouched.
///
/// The LOS delay is `d_tg_ue/c`, the NLOS delay `(d_tg_mp + d_ue_mp)/c`.
#[allow(clippy::too_many_arguments)]
pub fn target_ue_channel(
    q: usize,
    geom_ue: &ArrayGeometry,
    ue_pos: Vec3,
    target: TargetPoint,
    scatterer: &ScattererSpec,
    blocked: bool,
    wavelength: f64,
    spacing_hz: f64,
) -> Result<(ChannelVector, ChannelVector), ChannelError> {
    if q == 0 {
        return Err(ChannelError::SubcarrierIndex(q));
    }
    let d_los = target.position.distance(ue_pos);
    let d_tg_mp = target.position.distance(scatterer.position);
    let d_ue_mp = ue_pos.distance(scatterer.position);

    let los_gain = bistatic_gain_los(wavelength, target.rcs, d_los)?;
    let los_angle = geom_ue.local_angle_to(ue_pos, target.position);
    let mut los = build_vector(
        q,
        geom_ue,
        los_angle,
        los_gain,
        spacing_hz,
        d_los / SPEED_OF_LIGHT,
    );
    if blocked {
        los.coeffs
            .iter_mut()
            .for_each(|c| *c = Complex64::new(0.0, 0.0));
    }

    let nlos_gain = bistatic_gain_nlos(wavelength, target.rcs, scatterer.rcs, d_tg_mp, d_ue_mp)?;
    let nlos_angle = geom_ue.local_angle_to(ue_pos, scatterer.position);
    let nlos = build_vector(
        q,
        geom_ue,
        nlos_angle,
        nlos_gain,
        spacing_hz,
        (d_tg_mp + d_ue_mp) / SPEED_OF_LIGHT,
    );
    Ok((los, nlos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ula(rows: usize, cols: usize) -> ArrayGeometry {
        ArrayGeometry::new(rows, cols, 0.5, 0.0).unwrap()
    }

    fn lambda() -> f64 {
        SPEED_OF_LIGHT / 24e9
    }

    #[test]
    fn broadside_is_all_ones() {
        let a = steering_vector(&ula(2, 16), Angle2D::new(0.0, 0.0));
        assert!(a
            .iter()
            .all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn inner_product_matches_direct_sum() {
        use rand::{Rng, SeedableRng};
        let geom = ula(4, 8);
        let n = geom.len() as f64;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a1 = Angle2D::new(rng.random_range(-PI..PI), rng.random_range(-1.5..1.5));
            let a2 = Angle2D::new(rng.random_range(-PI..PI), rng.random_range(-1.5..1.5));
            let v1 = steering_vector(&geom, a1);
            let v2 = steering_vector(&geom, a2);
            let ip: Complex64 = v1.iter().zip(&v2).map(|(x, y)| x.conj() * y).sum();

            // element-wise double sum over the phase difference
            let mut direct = Complex64::new(0.0, 0.0);
            for m in 0..4 {
                for k in 0..8 {
                    let p1 = PI
                        * (m as f64 * a1.elevation.sin()
                            + k as f64 * a1.elevation.cos() * a1.azimuth.sin());
                    let p2 = PI
                        * (m as f64 * a2.elevation.sin()
                            + k as f64 * a2.elevation.cos() * a2.azimuth.sin());
                    direct += Complex64::new(0.0, p2 - p1).exp();
                }
            }
            assert!((ip.norm() / n - direct.norm() / n).abs() < 1e-12);
        }
    }

    #[test]
    fn friis_reference_value() {
        let g = friis_gain(lambda(), 100.0).unwrap();
        // λ = c/24 GHz = 0.012491 m → λ²/(16π²·1e4)
        let expected = lambda().powi(2) / (16.0 * PI * PI * 1e4);
        assert!((g.value - expected).abs() < 1e-25);
        assert!((g.value - 9.88e-11).abs() / 9.88e-11 < 5e-3);
        let half = friis_gain(lambda(), 50.0).unwrap();
        assert!((half.value / g.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn friis_rejects_nonpositive_distance() {
        assert!(friis_gain(lambda(), 0.0).is_err());
        assert!(friis_gain(lambda(), -3.0).is_err());
        assert!(bistatic_gain_nlos(lambda(), 1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn friis_decreases_with_distance() {
        let mut last = f64::INFINITY;
        for d in [1.0, 10.0, 100.0, 1e3, 1e6] {
            let g = friis_gain(lambda(), d).unwrap().value;
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn unit_rcs_los_equals_friis() {
        let los = bistatic_gain_los(lambda(), 1.0, 100.0).unwrap();
        let f = friis_gain(lambda(), 100.0).unwrap();
        assert!((los.value - f.value).abs() <= 1e-12 * f.value);
    }

    #[test]
    fn nlos_cancellation() {
        let l = lambda();
        let d_ue_mp = 37.0;
        let d_tg_mp = 52.0;
        let sigma_mp = 16.0 * PI * PI * d_ue_mp * d_ue_mp / (l * l);
        let nlos = bistatic_gain_nlos(l, 2.5, sigma_mp, d_tg_mp, d_ue_mp).unwrap();
        let los = bistatic_gain_los(l, 2.5, d_tg_mp).unwrap();
        assert!((nlos.value - los.value).abs() <= 1e-12 * los.value);
    }

    #[test]
    fn gains_are_linear_in_rcs() {
        let l = lambda();
        let a = bistatic_gain_los(l, 1.5, 40.0).unwrap().value;
        let b = bistatic_gain_los(l, 3.0, 40.0).unwrap().value;
        assert!((b / a - 2.0).abs() < 1e-12);
        let a = bistatic_gain_nlos(l, 1.5, 10.0, 30.0, 20.0).unwrap().value;
        let b = bistatic_gain_nlos(l, 3.0, 10.0, 30.0, 20.0).unwrap().value;
        assert!((b / a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bs_channel_first_subcarrier_and_norm() {
        let geom = ula(2, 16);
        let bs = Vec3::new(0.0, 0.0, 10.0);
        let tg = Vec3::new(10.0, 40.0, 1.5);
        let h = bs_target_channel(1, &geom, bs, tg, lambda(), 150e3).unwrap();
        let alpha = steering_vector(&geom, geom.local_angle_to(bs, tg));
        let amp = h.gain.amplitude();
        for (c, a) in h.coeffs.iter().zip(&alpha) {
            assert!((c - a * amp).norm() < 1e-12 * amp);
        }
        assert!((h.norm_sqr() - h.gain.value * 32.0).abs() < 1e-12 * h.gain.value);
        assert!((h.delay - bs.distance(tg) / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!(bs_target_channel(0, &geom, bs, tg, lambda(), 150e3).is_err());
    }

    #[test]
    fn bs_channel_matches_scalar_recomputation() {
        let geom = ArrayGeometry::new(2, 16, 0.5, PI / 2.0).unwrap();
        let bs = Vec3::new(0.0, 0.0, 10.0);
        let tg = Vec3::new(-12.0, 55.0, 1.5);
        let w = 150e3;
        let h = bs_target_channel(3, &geom, bs, tg, lambda(), w).unwrap();
        let d = bs.distance(tg);
        let beta = lambda().powi(2) / (16.0 * PI * PI * d * d);
        let tau = d / SPEED_OF_LIGHT;
        let az = (tg.y - bs.y).atan2(tg.x - bs.x) - PI / 2.0;
        let el = (tg.z - bs.z).atan2((tg.x - bs.x).hypot(tg.y - bs.y));
        for m in 0..2 {
            for n in 0..16 {
                let phase = PI * (m as f64 * el.sin() + n as f64 * el.cos() * az.sin())
                    - 2.0 * PI * 2.0 * w * tau;
                let expected = Complex64::from_polar(beta.sqrt(), phase);
                assert!((h.coeffs[m * 16 + n] - expected).norm() < 1e-12 * beta.sqrt());
            }
        }
    }

    fn ue_setup() -> (ArrayGeometry, Vec3, TargetPoint, ScattererSpec) {
        (
            ula(4, 4),
            Vec3::new(80.0, 0.0, 1.5),
            TargetPoint {
                position: Vec3::new(-10.0, 50.0, 1.5),
                rcs: 1.0,
            },
            ScattererSpec {
                position: Vec3::new(30.0, 90.0, 3.0),
                rcs: 1e6,
            },
        )
    }

    #[test]
    fn blockage_zeroes_only_los() {
        let (g, ue, tg, sc) = ue_setup();
        let (los_a, nlos_a) =
            target_ue_channel(2, &g, ue, tg, &sc, false, lambda(), 150e3).unwrap();
        let (los_b, nlos_b) = target_ue_channel(2, &g, ue, tg, &sc, true, lambda(), 150e3).unwrap();
        assert!(los_a.norm_sqr() > 0.0);
        assert_eq!(los_b.norm_sqr(), 0.0);
        assert_eq!(nlos_a, nlos_b);
    }

    #[test]
    fn vanishing_scatterer_kills_nlos() {
        let (g, ue, tg, mut sc) = ue_setup();
        let (_, full) = target_ue_channel(1, &g, ue, tg, &sc, false, lambda(), 150e3).unwrap();
        sc.rcs *= 1e-30;
        let (_, nlos) = target_ue_channel(1, &g, ue, tg, &sc, false, lambda(), 150e3).unwrap();
        let ratio = nlos.norm_sqr() / full.norm_sqr();
        assert!((ratio / 1e-30 - 1.0).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn ue_component_norms_match_formula() {
        let (g, ue, tg, sc) = ue_setup();
        let (los, nlos) = target_ue_channel(4, &g, ue, tg, &sc, false, lambda(), 150e3).unwrap();
        let l = lambda();
        let d = tg.position.distance(ue);
        let beta_los = tg.rcs * l * l / (16.0 * PI * PI * d * d);
        let d1 = tg.position.distance(sc.position);
        let d2 = ue.distance(sc.position);
        let beta_nlos = tg.rcs * sc.rcs * l.powi(4) / (256.0 * PI.powi(4) * d1 * d1 * d2 * d2);
        assert!(
            (los.norm_sqr().sqrt() - (beta_los * 16.0).sqrt()).abs()
                < 1e-12 * (beta_los * 16.0).sqrt()
        );
        assert!(
            (nlos.norm_sqr().sqrt() - (beta_nlos * 16.0).sqrt()).abs()
                < 1e-12 * (beta_nlos * 16.0).sqrt()
        );
        assert!((nlos.delay - (d1 + d2) / SPEED_OF_LIGHT).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn steering_entries_unit_modulus(az in -PI..PI, el in -1.5f64..1.5, rows in 1usize..6, cols in 1usize..20) {
            let g = ArrayGeometry::new(rows, cols, 0.5, 0.0).unwrap();
            for c in steering_vector(&g, Angle2D::new(az, el)) {
                prop_assert!((c.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn constant_subcarrier_ratio(q in 1usize..8, x in -50.0f64..50.0, y in 10.0f64..120.0) {
            let g = ula(2, 16);
            let bs = Vec3::new(0.0, 0.0, 10.0);
            let tg = Vec3::new(x, y, 1.5);
            let w = 150e3;
            let h1 = bs_target_channel(q, &g, bs, tg, lambda(), w).unwrap();
            let h2 = bs_target_channel(q + 1, &g, bs, tg, lambda(), w).unwrap();
            let expect = subcarrier_phase(2, w, h1.delay);
            for (a, b) in h1.coeffs.iter().zip(&h2.coeffs) {
                prop_assert!((b / a - expect).norm() < 1e-9);
            }
        }
    }
}
