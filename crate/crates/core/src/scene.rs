//! Simulation geometry: sensing region, beam grid, target trajectories, the
//! scatterer and the LOS blocker.
//!
//! Coordinates are meters in a right-handed frame with `z` up. Azimuth is
//! measured in the horizontal plane from `+x` towards `+y`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::Angle2D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("time {t} s outside trajectory horizon [0, {horizon}] s")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("invalid trajectory: {0}")]
    Trajectory(String),
    #[error("invalid sensing region: {0}")]
    Region(String),
    #[error("{0} must be positive")]
    NonPositiveRcs(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn horizontal_distance(self, o: Vec3) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Unit vector in the horizontal plane pointing at azimuth `heading`.
    pub fn heading(heading: f64) -> Vec3 {
        Vec3::new(heading.cos(), heading.sin(), 0.0)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Shape of a target path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Parabolic path: constant `speed` along the heading plus a constant
    /// lateral acceleration `curvature` (m/s², positive turns left).
    Quadratic { curvature: f64 },
    /// Constant velocity along the heading.
    Linear,
    /// Linear until `kink_time`, then linear along `heading + turn` at the
    /// same speed.
    Kinked { kink_time: f64, turn: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(flatten)]
    pub kind: TrajectoryKind,
    pub start: Vec3,
    /// Initial heading, rad (horizontal azimuth).
    pub heading: f64,
    /// m/s.
    pub speed: f64,
}

impl TrajectorySpec {
    pub fn validate(&self, horizon: f64) -> Result<(), SceneError> {
        if !(self.speed >= 0.0) || !self.speed.is_finite() {
            return Err(SceneError::Trajectory(format!(
                "speed must be >= 0, got {}",
                self.speed
            )));
        }
        if !self.start.is_finite() || !self.heading.is_finite() {
            return Err(SceneError::Trajectory(
                "start and heading must be finite".into(),
            ));
        }
        match self.kind {
            TrajectoryKind::Kinked { kink_time, turn } => {
                if !(0.0..=horizon).contains(&kink_time) || !turn.is_finite() {
                    return Err(SceneError::Trajectory(format!(
                        "kink time {kink_time} outside [0, {horizon}]"
                    )));
                }
            }
            TrajectoryKind::Quadratic { curvature } if !curvature.is_finite() => {
                return Err(SceneError::Trajectory("curvature must be finite".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Position at time `t` within `[0, horizon]`.
    pub fn position(&self, t: f64, horizon: f64) -> Result<Vec3, SceneError> {
        check_time(t, horizon)?;
        let h = Vec3::heading(self.heading);
        Ok(match self.kind {
            TrajectoryKind::Linear => self.start + h * (self.speed * t),
            TrajectoryKind::Quadratic { curvature } => {
                let lateral = Vec3::heading(self.heading + PI / 2.0);
                self.start + h * (self.speed * t) + lateral * (0.5 * curvature * t * t)
            }
            TrajectoryKind::Kinked { kink_time, turn } => {
                if t <= kink_time {
                    self.start + h * (self.speed * t)
                } else {
                    let knee = self.start + h * (self.speed * kink_time);
                    knee + Vec3::heading(self.heading + turn) * (self.speed * (t - kink_time))
                }
            }
        })
    }

    /// Velocity at time `t`. The kinked path uses the post-kink velocity at
    /// and after the kink instant.
    pub fn velocity(&self, t: f64, horizon: f64) -> Result<Vec3, SceneError> {
        check_time(t, horizon)?;
        let h = Vec3::heading(self.heading);
        Ok(match self.kind {
            TrajectoryKind::Linear => h * self.speed,
            TrajectoryKind::Quadratic { curvature } => {
                h * self.speed + Vec3::heading(self.heading + PI / 2.0) * (curvature * t)
            }
            TrajectoryKind::Kinked { kink_time, turn } => {
                if t < kink_time {
                    h * self.speed
                } else {
                    Vec3::heading(self.heading + turn) * self.speed
                }
            }
        })
    }

    /// Upper bound on speed over `[0, horizon]`.
    pub fn max_speed(&self, horizon: f64) -> f64 {
        match self.kind {
            TrajectoryKind::Quadratic { curvature } => self.speed.hypot(curvature * horizon),
            _ => self.speed,
        }
    }
}

fn check_time(t: f64, horizon: f64) -> Result<(), SceneError> {
    if (0.0..=horizon).contains(&t) {
        Ok(())
    } else {
        Err(SceneError::TimeOutOfRange { t, horizon })
    }
}

/// Free function form of [`TrajectorySpec::position`].
pub fn target_position(spec: &TrajectorySpec, t: f64, horizon: f64) -> Result<Vec3, SceneError> {
    spec.position(t, horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub trajectory: TrajectorySpec,
    /// Radar cross section, m².
    pub rcs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererSpec {
    pub position: Vec3,
    /// Radar cross section, m².
    pub rcs: f64,
}

/// Azimuth sector of ground ranges, swept by `n_beam` equal-width beams at a
/// fixed elevation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingRegion {
    pub az_lo: f64,
    pub az_hi: f64,
    /// Horizontal range from the BS, meters.
    pub r_lo: f64,
    pub r_hi: f64,
    pub elevation: f64,
    pub n_beam: usize,
}

impl SensingRegion {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.az_lo < self.az_hi) || self.az_lo < -PI || self.az_hi > PI {
            return Err(SceneError::Region(format!(
                "azimuth interval [{}, {}] must be increasing within [-π, π]",
                self.az_lo, self.az_hi
            )));
        }
        if !(0.0 <= self.r_lo && self.r_lo < self.r_hi) {
            return Err(SceneError::Region(format!(
                "range interval [{}, {}] must be increasing and non-negative",
                self.r_lo, self.r_hi
            )));
        }
        if self.n_beam < 2 {
            return Err(SceneError::Region(format!(
                "n_beam must be >= 2, got {}",
                self.n_beam
            )));
        }
        if !self.elevation.is_finite() {
            return Err(SceneError::Region("elevation must be finite".into()));
        }
        Ok(())
    }

    pub fn beam_width(&self) -> f64 {
        (self.az_hi - self.az_lo) / self.n_beam as f64
    }

    /// Whether `p` lies inside the region as seen from `bs`.
    pub fn contains(&self, bs: Vec3, p: Vec3) -> bool {
        let az = (p.y - bs.y).atan2(p.x - bs.x);
        let r = bs.horizontal_distance(p);
        (self.az_lo..=self.az_hi).contains(&az) && (self.r_lo..=self.r_hi).contains(&r)
    }
}

/// Beam centers over a [`SensingRegion`], ordered by azimuth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamGrid {
    pub centers: Vec<Angle2D>,
    pub region: SensingRegion,
}

impl BeamGrid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn width(&self) -> f64 {
        self.region.beam_width()
    }
}

pub fn build_beam_grid(region: &SensingRegion) -> Result<BeamGrid, SceneError> {
    region.validate()?;
    let width = region.beam_width();
    let centers = (0..region.n_beam)
        .map(|i| Angle2D::new(region.az_lo + (i as f64 + 0.5) * width, region.elevation))
        .collect();
    Ok(BeamGrid {
        centers,
        region: *region,
    })
}

/// Index of the beam cell containing `p`, if any. Cells are half-open
/// `[lo + iΔ, lo + (i+1)Δ)` except the last, which is closed.
pub fn beam_containing(grid: &BeamGrid, bs_pos: Vec3, p: Vec3) -> Option<usize> {
    let region = &grid.region;
    let r = bs_pos.horizontal_distance(p);
    if !(region.r_lo..=region.r_hi).contains(&r) {
        return None;
    }
    let az = (p.y - bs_pos.y).atan2(p.x - bs_pos.x);
    if !(region.az_lo..=region.az_hi).contains(&az) {
        return None;
    }
    let idx = ((az - region.az_lo) / grid.width()).floor() as usize;
    Some(idx.min(grid.len() - 1))
}

/// Axis-aligned box occluder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: Vec3) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }
}

/// True iff the segment `tg`–`ue` intersects the (closed) blocker box.
pub fn los_blocked(tg: Vec3, ue: Vec3, blocker: &Aabb) -> bool {
    let d = ue - tg;
    let mut t0 = 0.0_f64;
    let mut t1 = 1.0_f64;
    for (o, dir, lo, hi) in [
        (tg.x, d.x, blocker.min.x, blocker.max.x),
        (tg.y, d.y, blocker.min.y, blocker.max.y),
        (tg.z, d.z, blocker.min.z, blocker.max.z),
    ] {
        if dir == 0.0 {
            if o < lo || o > hi {
                return false;
            }
            continue;
        }
        let (mut a, mut b) = ((lo - o) / dir, (hi - o) / dir);
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        t0 = t0.max(a);
        t1 = t1.min(b);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Static scene description: node positions and scene objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bs: Vec3,
    pub ue: Vec3,
    pub region: SensingRegion,
    pub targets: Vec<TargetSpec>,
    pub scatterer: ScattererSpec,
    #[serde(default)]
    pub blocker: Option<Aabb>,
}

/// Positions and velocities of every target at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub time: f64,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub blocked: Vec<bool>,
}

impl Scene {
    pub fn validate(&self, horizon: f64) -> Result<(), SceneError> {
        self.region.validate()?;
        for t in &self.targets {
            t.trajectory.validate(horizon)?;
            if !(t.rcs > 0.0) {
                return Err(SceneError::NonPositiveRcs("target rcs"));
            }
        }
        if !(self.scatterer.rcs > 0.0) {
            return Err(SceneError::NonPositiveRcs("scatterer rcs"));
        }
        Ok(())
    }

    pub fn state_at(&self, t: f64, horizon: f64) -> Result<SceneState, SceneError> {
        let mut positions = Vec::with_capacity(self.targets.len());
        let mut velocities = Vec::with_capacity(self.targets.len());
        let mut blocked = Vec::with_capacity(self.targets.len());
        for target in &self.targets {
            let p = target.trajectory.position(t, horizon)?;
            positions.push(p);
            velocities.push(target.trajectory.velocity(t, horizon)?);
            blocked.push(
                self.blocker
                    .as_ref()
                    .is_some_and(|b| los_blocked(p, self.ue, b)),
            );
        }
        Ok(SceneState {
            time: t,
            positions,
            velocities,
            blocked,
        })
    }

    /// Centroid of the sensing region at ground level plus `height`.
    pub fn region_centroid(&self, height: f64) -> Vec3 {
        let az = 0.5 * (self.region.az_lo + self.region.az_hi);
        let r = 0.5 * (self.region.r_lo + self.region.r_hi);
        Vec3::new(self.bs.x + r * az.cos(), self.bs.y + r * az.sin(), height)
    }
}
