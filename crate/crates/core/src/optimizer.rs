//! Threshold selection: MAP decision boundaries from per-class Gaussian fits
//! and a simulation-driven log-barrier (interior-point) optimizer.
//!
//! Threshold vectors are stored in ascending order `[η0, η1, …]`; the
//! barrier penalizes every consecutive gap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::Hypothesis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("no calibration samples for class {0}")]
    EmptyClass(String),
    #[error("invalid fit: {0}")]
    Fit(String),
    #[error("optimizer configuration: {0}")]
    Config(String),
    #[error("finite-difference step underflow at T = {0:?}")]
    StepUnderflow(Vec<f64>),
    #[error("objective evaluation failed: {0}")]
    Objective(String),
}

/// Gaussian fit of the RESI distribution of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFit {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub prior: f64,
    pub samples: usize,
    /// Fewer than [`MIN_CLASS_SAMPLES`] samples backed this fit.
    pub sparse: bool,
}

pub const MIN_CLASS_SAMPLES: usize = 10;

/// Per-class fits in decision order (lowest class first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisFit {
    pub classes: Vec<ClassFit>,
}

impl HypothesisFit {
    pub fn sparse_classes(&self) -> Vec<&str> {
        self.classes
            .iter()
            .filter(|c| c.sparse)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Fits one Gaussian per named class. The std is floored at a tiny
/// positive value so single-sample or constant classes stay usable.
pub fn fit_classes(groups: &[(&str, &[f64])]) -> Result<HypothesisFit, OptimizerError> {
    let empty: Vec<&str> = groups
        .iter()
        .filter(|(_, s)| s.is_empty())
        .map(|(n, _)| *n)
        .collect();
    if !empty.is_empty() {
        return Err(OptimizerError::EmptyClass(empty.join(", ")));
    }
    let total: usize = groups.iter().map(|(_, s)| s.len()).sum();
    let classes = groups
        .iter()
        .map(|(name, s)| {
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let var = if s.len() > 1 {
                s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            ClassFit {
                name: name.to_string(),
                mean,
                std: var.sqrt().max(1e-9 * mean.abs().max(1.0)),
                prior: n / total as f64,
                samples: s.len(),
                sparse: s.len() < MIN_CLASS_SAMPLES,
            }
        })
        .collect();
    Ok(HypothesisFit { classes })
}

/// Fits the four SSF hypotheses from labeled calibration samples.
pub fn fit_hypothesis_distributions(
    samples: &[(Hypothesis, f64)],
) -> Result<HypothesisFit, OptimizerError> {
    let mut buckets: [Vec<f64>; 4] = Default::default();
    for &(h, r) in samples {
        buckets[h.index()].push(r);
    }
    let names = ["H0", "H1", "H2", "H3"];
    let groups: Vec<(&str, &[f64])> = names
        .iter()
        .zip(buckets.iter())
        .map(|(n, b)| (*n, b.as_slice()))
        .collect();
    fit_classes(&groups)
}

/// Fits e-ARQ's three categories: Lost (H0 ∪ H1), NACK (H2), ACK (H3).
pub fn fit_earq_distributions(
    samples: &[(Hypothesis, f64)],
) -> Result<HypothesisFit, OptimizerError> {
    let mut lost = Vec::new();
    let mut nack = Vec::new();
    let mut ack = Vec::new();
    for &(h, r) in samples {
        match h {
            Hypothesis::H0 | Hypothesis::H1 => lost.push(r),
            Hypothesis::H2 => nack.push(r),
            Hypothesis::H3 => ack.push(r),
        }
    }
    fit_classes(&[("LOST", &lost), ("NACK", &nack), ("ACK", &ack)])
}

/// A decision boundary between two adjacent classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub value: f64,
    /// No weighted-density crossing lay between the means; midpoint used.
    pub fallback: bool,
}

/// Solves `p1·N(x; m1, s1) = p2·N(x; m2, s2)` for the crossing between the
/// two means.
pub fn gaussian_boundary(a: &ClassFit, b: &ClassFit) -> Boundary {
    let (m1, s1, p1) = (a.mean, a.std, a.prior);
    let (m2, s2, p2) = (b.mean, b.std, b.prior);
    let mid = 0.5 * (m1 + m2);
    let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
    let inside = |x: f64| x.is_finite() && x >= lo && x <= hi;

    let v1 = s1 * s1;
    let v2 = s2 * s2;
    let qa = -0.5 / v1 + 0.5 / v2;
    let qb = m1 / v1 - m2 / v2;
    let qc = -0.5 * m1 * m1 / v1 + 0.5 * m2 * m2 / v2 + (p1 * s2 / (p2 * s1)).ln();

    let candidate = if (s1 - s2).abs() <= 1e-12 * s1.max(s2) {
        if m1 == m2 {
            None
        } else {
            Some(mid + v1 * (p1 / p2).ln() / (m2 - m1))
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            None
        } else {
            let sq = disc.sqrt();
            // numerically stable pair of roots
            let q = -0.5 * (qb + qb.signum() * sq);
            let r1 = q / qa;
            let r2 = if q != 0.0 { qc / q } else { f64::NAN };
            [r1, r2]
                .into_iter()
                .filter(|x| inside(*x))
                .min_by(|x, y| (x - mid).abs().total_cmp(&(y - mid).abs()))
        }
    };
    match candidate {
        Some(x) if inside(x) => Boundary {
            value: x,
            fallback: false,
        },
        _ => Boundary {
            value: mid,
            fallback: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapThresholds {
    /// Ascending thresholds, one per adjacent class pair.
    pub values: Vec<f64>,
    pub boundaries: Vec<Boundary>,
}

impl MapThresholds {
    pub fn any_fallback(&self) -> bool {
        self.boundaries.iter().any(|b| b.fallback)
    }
}

/// MAP boundaries between consecutive classes, forced strictly increasing
/// by nudging coincident or inverted values up by `1e-6`.
pub fn map_thresholds(fit: &HypothesisFit) -> Result<MapThresholds, OptimizerError> {
    if fit.classes.len() < 2 {
        return Err(OptimizerError::Fit("need at least two classes".into()));
    }
    let prior_sum: f64 = fit.classes.iter().map(|c| c.prior).sum();
    if (prior_sum - 1.0).abs() > 1e-9
        || fit
            .classes
            .iter()
            .any(|c| !(c.std > 0.0) || !c.mean.is_finite())
    {
        return Err(OptimizerError::Fit(
            "priors must sum to 1 and every std must be positive".into(),
        ));
    }
    let boundaries: Vec<Boundary> = fit
        .classes
        .windows(2)
        .map(|w| gaussian_boundary(&w[0], &w[1]))
        .collect();
    let mut values: Vec<f64> = boundaries.iter().map(|b| b.value).collect();
    for i in 1..values.len() {
        if values[i] <= values[i - 1] {
            values[i] = values[i - 1] + 1e-6;
        }
    }
    Ok(MapThresholds { values, boundaries })
}

pub fn strictly_increasing(t: &[f64]) -> bool {
    t.windows(2).all(|w| w[1] > w[0]) && t.iter().all(|x| x.is_finite())
}

/// `Φ_μ = −P_det − μ·Σ log(T_{i+1} − T_i)`; `+∞` unless strictly ordered.
pub fn barrier_objective(t: &[f64], mu: f64, pdet: f64) -> f64 {
    if !strictly_increasing(t) {
        return f64::INFINITY;
    }
    let barrier: f64 = t.windows(2).map(|w| (w[1] - w[0]).ln()).sum();
    -pdet - mu * barrier
}

fn barrier_only(t: &[f64], mu: f64) -> f64 {
    barrier_objective(t, mu, 0.0)
}

/// Central finite-difference gradient. `h` is halved until every probe
/// `T ± h·e_i` is strictly ordered; fails below `1e-9`.
pub fn fd_gradient<F>(mut objective: F, t: &[f64], h: f64) -> Result<Vec<f64>, OptimizerError>
where
    F: FnMut(&[f64]) -> Result<f64, OptimizerError>,
{
    let h = feasible_step(t, h)?;
    let mut grad = vec![0.0; t.len()];
    let mut probe = t.to_vec();
    for i in 0..t.len() {
        probe[i] = t[i] + h;
        let up = objective(&probe)?;
        probe[i] = t[i] - h;
        let down = objective(&probe)?;
        probe[i] = t[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

fn feasible_step(t: &[f64], h0: f64) -> Result<f64, OptimizerError> {
    let probes_ok = |h: f64| {
        let mut p = t.to_vec();
        (0..t.len()).all(|i| {
            let ok = [h, -h].iter().all(|d| {
                p[i] = t[i] + d;
                strictly_increasing(&p)
            });
            p[i] = t[i];
            ok
        })
    };
    let mut h = h0;
    while !probes_ok(h) {
        h *= 0.5;
        if h < 1e-9 {
            return Err(OptimizerError::StepUnderflow(t.to_vec()));
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub mu0: f64,
    pub tau_decay: f64,
    pub epsilon: f64,
    pub fd_step: f64,
    pub max_iterations: usize,
    pub t_min: Vec<f64>,
    pub t_max: Vec<f64>,
    /// Length of the first quasi-Newton step, RESI units; the inverse
    /// Hessian starts as this multiple of the identity over `‖∇Φ‖`.
    pub initial_step: f64,
    /// Maximum number of step halvings per line search.
    pub max_backtracks: usize,
}

impl OptimizerConfig {
    pub fn validate(&self, dim: usize) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::Config(m.to_string()));
        if !(self.mu0 > 0.0) {
            return bad("mu0 must be positive");
        }
        if !(self.tau_decay > 0.0 && self.tau_decay < 1.0) {
            return bad("tau_decay must lie in (0, 1)");
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step must be positive");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if !(self.initial_step > 0.0) {
            return bad("initial_step must be positive");
        }
        if self.t_min.len() != dim || self.t_max.len() != dim {
            return bad("bounds must match the threshold dimension");
        }
        if self
            .t_min
            .iter()
            .zip(&self.t_max)
            .any(|(lo, hi)| !(lo < hi))
        {
            return bad("every lower bound must be below its upper bound");
        }
        Ok(())
    }

    fn clamp(&self, t: &mut [f64]) {
        for (i, x) in t.iter_mut().enumerate() {
            *x = x.clamp(self.t_min[i], self.t_max[i]);
        }
    }

    fn within_bounds(&self, t: &[f64]) -> bool {
        t.iter()
            .enumerate()
            .all(|(i, x)| *x >= self.t_min[i] && *x <= self.t_max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub t: Vec<f64>,
    /// `−P_det` at `t`.
    pub f: f64,
    pub phi: f64,
    pub gradient: Vec<f64>,
    pub alpha: f64,
    pub mu: f64,
    /// Objective calls spent in this iteration.
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub initial_t: Vec<f64>,
    pub initial_f: f64,
    pub iterations: Vec<IterationRecord>,
    pub best_t: Vec<f64>,
    pub best_f: f64,
    pub total_calls: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn scaled_identity(n: usize, s: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { s } else { 0.0 }).collect())
        .collect()
}

/// BFGS update of the inverse Hessian approximation. Returns false (and
/// leaves `h` untouched) when the curvature condition fails.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64]) -> bool {
    let sy = dot(s, y);
    if !(sy > 1e-12 * dot(s, s).sqrt() * dot(y, y).sqrt()) || sy <= 0.0 {
        return false;
    }
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
    true
}

/// Minimizes `f(T)` (normally `−P_det`) subject to strict ordering via a
/// decaying log barrier, with bounds enforced by clamping line-search
/// candidates. Returns the best feasible `T` seen and the iteration trace.
pub fn optimize_thresholds<F>(
    cfg: &OptimizerConfig,
    t_init: &[f64],
    mut objective: F,
) -> Result<(Vec<f64>, OptimizationTrace), OptimizerError>
where
    F: FnMut(&[f64]) -> Result<f64, OptimizerError>,
{
    let n = t_init.len();
    cfg.validate(n)?;
    if !strictly_increasing(t_init) || !cfg.within_bounds(t_init) {
        return Err(OptimizerError::Config(format!(
            "initial thresholds {t_init:?} are not strictly feasible"
        )));
    }
    let mut calls = 0usize;
    let mut eval = |t: &[f64], calls: &mut usize| -> Result<f64, OptimizerError> {
        *calls += 1;
        objective(t)
    };

    let mut mu = cfg.mu0;
    let mut x = t_init.to_vec();
    let mut fx = eval(&x, &mut calls)?;
    let mut trace = OptimizationTrace {
        initial_t: x.clone(),
        initial_f: fx,
        iterations: Vec::new(),
        best_t: x.clone(),
        best_f: fx,
        total_calls: 0,
    };
    let mut h_inv: Option<Vec<Vec<f64>>> = None;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    for k in 0..cfg.max_iterations {
        let calls_before = calls;
        let g = {
            let mut phi = |t: &[f64]| -> Result<f64, OptimizerError> {
                let f = eval(t, &mut calls)?;
                Ok(f + barrier_only(t, mu))
            };
            fd_gradient(&mut phi, &x, cfg.fd_step)?
        };
        let phi_x = fx + barrier_only(&x, mu);
        let g_norm = dot(&g, &g).sqrt();

        if let (Some(h), Some((px, pg))) = (h_inv.as_mut(), prev.as_ref()) {
            let s: Vec<f64> = x.iter().zip(px).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
            if !bfgs_update(h, &s, &y) {
                h_inv = None;
            }
        }
        let h =
            h_inv.get_or_insert_with(|| scaled_identity(n, cfg.initial_step / g_norm.max(1e-300)));
        let mut d: Vec<f64> = mat_vec(h, &g).into_iter().map(|v| -v).collect();
        if dot(&g, &d) >= 0.0 {
            *h = scaled_identity(n, cfg.initial_step / g_norm.max(1e-300));
            d = g
                .iter()
                .map(|v| -v * cfg.initial_step / g_norm.max(1e-300))
                .collect();
        }

        let mut alpha = 1.0;
        let mut accepted: Option<(Vec<f64>, f64, f64)> = None;
        if g_norm > 0.0 {
            for _ in 0..=cfg.max_backtracks {
                let mut cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                cfg.clamp(&mut cand);
                if strictly_increasing(&cand) && cand != x {
                    let fc = eval(&cand, &mut calls)?;
                    let phi_c = fc + barrier_only(&cand, mu);
                    let step: Vec<f64> = cand.iter().zip(&x).map(|(a, b)| a - b).collect();
                    if phi_c <= phi_x + 1e-4 * dot(&g, &step) {
                        accepted = Some((cand, fc, phi_c));
                        break;
                    }
                }
                alpha *= 0.5;
            }
        }

        let (improvement, phi_new) = match accepted {
            Some((cand, fc, phi_c)) => {
                prev = Some((x.clone(), g.clone()));
                x = cand;
                fx = fc;
                (phi_x - phi_c, phi_c)
            }
            None => {
                alpha = 0.0;
                (0.0, phi_x)
            }
        };
        if fx < trace.best_f {
            trace.best_f = fx;
            trace.best_t = x.clone();
        }
        trace.iterations.push(IterationRecord {
            iteration: k + 1,
            t: x.clone(),
            f: fx,
            phi: phi_new,
            gradient: g,
            alpha,
            mu,
            calls: calls - calls_before,
        });
        mu *= cfg.tau_decay;
        if improvement < cfg.epsilon {
            break;
        }
    }
    trace.total_calls = calls;
    Ok((trace.best_t.clone(), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn class(name: &str, mean: f64, std: f64, prior: f64) -> ClassFit {
        ClassFit {
            name: name.into(),
            mean,
            std,
            prior,
            samples: 100,
            sparse: false,
        }
    }

    #[test]
    fn symmetric_gaussians_give_midpoint() {
        let b = gaussian_boundary(&class("a", 2.0, 1.0, 0.5), &class("b", 6.0, 1.0, 0.5));
        assert!((b.value - 4.0).abs() < 1e-12);
        assert!(!b.fallback);
    }

    #[test]
    fn prior_ratio_e_shifts_by_var_over_gap() {
        let s = 1.3;
        let (m1, m2) = (2.0, 7.0);
        let p2 = 1.0 / (1.0 + std::f64::consts::E);
        let p1 = std::f64::consts::E * p2;
        let b = gaussian_boundary(&class("a", m1, s, p1), &class("b", m2, s, p2));
        assert!((b.value - (4.5 + s * s / (m2 - m1))).abs() < 1e-12);
    }

    #[test]
    fn unequal_variance_root_satisfies_equality() {
        let a = class("a", 1.0, 0.5, 0.7);
        let b = class("b", 5.0, 2.0, 0.3);
        let x = gaussian_boundary(&a, &b);
        assert!(!x.fallback);
        let dens = |c: &ClassFit, x: f64| {
            c.prior / (c.std * (2.0 * std::f64::consts::PI).sqrt())
                * (-(x - c.mean).powi(2) / (2.0 * c.std * c.std)).exp()
        };
        assert!((dens(&a, x.value) / dens(&b, x.value) - 1.0).abs() < 1e-9);
        assert!(x.value > 1.0 && x.value < 5.0);
    }

    #[test]
    fn no_crossing_between_means_falls_back() {
        // overwhelming prior on the first class pushes the crossing past m2
        let b = gaussian_boundary(
            &class("a", 0.0, 1.0, 1.0 - 1e-12),
            &class("b", 1.0, 1.0, 1e-12),
        );
        assert!(b.fallback);
        assert_eq!(b.value, 0.5);
    }

    #[test]
    fn map_output_strictly_increasing() {
        let fit = HypothesisFit {
            classes: vec![
                class("H0", 3.0, 1.0, 0.25),
                class("H1", 3.0, 1.0, 0.25),
                class("H2", 3.0, 1.0, 0.25),
                class("H3", 10.0, 1.0, 0.25),
            ],
        };
        let m = map_thresholds(&fit).unwrap();
        assert!(strictly_increasing(&m.values));
        assert!(m.any_fallback());
    }

    #[test]
    fn fit_recovers_synthetic_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = [(1.0, 0.5), (2.0, 0.7), (5.0, 1.0), (12.0, 2.0)];
        let mut samples = Vec::new();
        for (i, &(m, s)) in truth.iter().enumerate() {
            let d = Normal::new(m, s).unwrap();
            for _ in 0..400 {
                samples.push((Hypothesis::ALL[i], d.sample(&mut rng)));
            }
        }
        let fit = fit_hypothesis_distributions(&samples).unwrap();
        for (c, &(m, s)) in fit.classes.iter().zip(&truth) {
            let se = s / 400f64.sqrt();
            assert!((c.mean - m).abs() < 3.0 * se, "{} vs {}", c.mean, m);
        }
        let total: f64 = fit.classes.iter().map(|c| c.prior).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_trace_names_missing_classes() {
        let samples: Vec<_> = (0..20).map(|i| (Hypothesis::H1, i as f64)).collect();
        match fit_hypothesis_distributions(&samples) {
            Err(OptimizerError::EmptyClass(names)) => assert_eq!(names, "H0, H2, H3"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sparse_classes_flagged() {
        let mut samples: Vec<_> = (0..20).map(|i| (Hypothesis::H0, i as f64)).collect();
        samples.extend((0..5).map(|i| (Hypothesis::H1, i as f64)));
        samples.extend((0..20).map(|i| (Hypothesis::H2, i as f64)));
        samples.extend((0..3).map(|i| (Hypothesis::H3, i as f64)));
        let fit = fit_hypothesis_distributions(&samples).unwrap();
        assert_eq!(fit.sparse_classes(), vec!["H1", "H3"]);
    }

    #[test]
    fn barrier_cases() {
        assert_eq!(barrier_objective(&[1.0, 2.0, 3.0], 0.0, 0.4), -0.4);
        assert_eq!(barrier_objective(&[1.0, 2.0, 3.0], 0.7, 0.4), -0.4);
        assert_eq!(barrier_objective(&[1.0, 3.0, 3.0], 0.1, 0.4), f64::INFINITY);
        let near = barrier_objective(&[1.0, 3.0 - 1e-200, 3.0], 0.1, 0.4);
        assert!(near > 40.0);
    }

    #[test]
    fn fd_exact_on_quadratic_and_flat() {
        let t0 = [3.0, 6.0, 10.0];
        let quad = |t: &[f64]| Ok(t.iter().zip(&t0).map(|(a, b)| (a - b).powi(2)).sum::<f64>());
        let t = [1.0, 4.5, 11.0];
        let g = fd_gradient(quad, &t, 0.25).unwrap();
        for i in 0..3 {
            assert!((g[i] - 2.0 * (t[i] - t0[i])).abs() < 1e-12);
        }
        let g = fd_gradient(|_: &[f64]| Ok(7.0), &t, 0.05).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fd_richardson_ratio_is_quadratic() {
        let f = |t: &[f64]| Ok((t[0]).sin() * (0.5 * t[1]).exp() + t[2].powi(3));
        let exact = |t: &[f64]| {
            [
                t[0].cos() * (0.5 * t[1]).exp(),
                0.5 * t[0].sin() * (0.5 * t[1]).exp(),
                3.0 * t[2] * t[2],
            ]
        };
        let t = [0.4, 1.1, 2.0];
        let e = exact(&t);
        let g1 = fd_gradient(f, &t, 0.1).unwrap();
        let g2 = fd_gradient(f, &t, 0.05).unwrap();
        for i in 0..3 {
            let ratio = (g1[i] - e[i]).abs() / (g2[i] - e[i]).abs();
            assert!((ratio - 4.0).abs() < 0.1, "component {i}: ratio {ratio}");
        }
    }

    #[test]
    fn fd_shrinks_step_and_underflows() {
        let t = [1.0, 1.05, 2.0];
        let mut probes = Vec::new();
        fd_gradient(
            |p: &[f64]| {
                probes.push(p.to_vec());
                Ok(0.0)
            },
            &t,
            0.2,
        )
        .unwrap();
        assert!(probes.iter().all(|p| strictly_increasing(p)));
        let bad = fd_gradient(|_: &[f64]| Ok(0.0), &[1.0, 1.0 + 1e-10, 2.0], 0.05);
        assert!(matches!(bad, Err(OptimizerError::StepUnderflow(_))));
    }

    fn surrogate(t: &[f64]) -> Result<f64, OptimizerError> {
        let opt = [3.0, 6.0, 10.0];
        Ok(-(-t
            .iter()
            .zip(&opt)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>())
        .exp())
    }

    fn surrogate_cfg() -> OptimizerConfig {
        OptimizerConfig {
            mu0: 0.1,
            tau_decay: 0.5,
            epsilon: 0.0,
            fd_step: 0.05,
            max_iterations: 40,
            t_min: vec![0.0; 3],
            t_max: vec![20.0; 3],
            initial_step: 1.0,
            max_backtracks: 30,
        }
    }

    #[test]
    fn surrogate_converges() {
        let (t, trace) =
            optimize_thresholds(&surrogate_cfg(), &[2.2, 5.5, 10.6], surrogate).unwrap();
        let err = t
            .iter()
            .zip([3.0, 6.0, 10.0])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "{t:?}");
        assert!(trace.iterations.len() <= 40);
    }

    #[test]
    fn infinite_epsilon_stops_after_one_iteration() {
        let cfg = OptimizerConfig {
            epsilon: f64::INFINITY,
            ..surrogate_cfg()
        };
        let init = [2.2, 5.5, 10.6];
        let (t, trace) = optimize_thresholds(&cfg, &init, surrogate).unwrap();
        assert_eq!(trace.iterations.len(), 1);
        let f_init = surrogate(&init).unwrap();
        let f_step = trace.iterations[0].f;
        assert_eq!(trace.best_f, f_init.min(f_step));
        assert!(t == init.to_vec() || t == trace.iterations[0].t);
    }

    #[test]
    fn infeasible_start_rejected() {
        let r = optimize_thresholds(&surrogate_cfg(), &[5.0, 4.0, 10.0], surrogate);
        assert!(matches!(r, Err(OptimizerError::Config(_))));
        let r = optimize_thresholds(&surrogate_cfg(), &[5.0, 6.0, 30.0], surrogate);
        assert!(matches!(r, Err(OptimizerError::Config(_))));
    }

    #[test]
    fn iterates_feasible_mu_geometric_calls_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // a bumpy objective with flat regions, like a finite-sample P_det
        let bumpy = |t: &[f64]| -> Result<f64, OptimizerError> {
            let base = surrogate(t)?;
            Ok((base * 200.0).round() / 200.0)
        };
        for _ in 0..20 {
            let init = [
                rng.random_range(0.5..3.0),
                rng.random_range(4.0..7.0),
                rng.random_range(8.0..15.0),
            ];
            let cfg = surrogate_cfg();
            let mut calls = 0usize;
            let (t, trace) = optimize_thresholds(&cfg, &init, |p: &[f64]| {
                calls += 1;
                bumpy(p)
            })
            .unwrap();
            assert!(strictly_increasing(&t));
            assert!(trace.best_f <= trace.initial_f);
            for w in trace.iterations.windows(2) {
                assert!((w[1].mu - 0.5 * w[0].mu).abs() <= 1e-15 * w[0].mu);
            }
            for it in &trace.iterations {
                assert!(strictly_increasing(&it.t) && cfg.within_bounds(&it.t));
                assert!(it.phi.is_finite());
                // 2n gradient probes plus at least zero line-search probes
                assert!(it.calls >= 6);
            }
            let counted: usize = trace.iterations.iter().map(|i| i.calls).sum::<usize>() + 1;
            assert_eq!(counted, calls);
            assert_eq!(trace.total_calls, calls);
        }
    }
}
