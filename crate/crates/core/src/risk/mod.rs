//! Collision probability against Gaussian predictions, injury harm from
//! collision speed change, and worst-case trajectory validation.

mod bvn;

pub use bvn::{bvn_cdf, norm_cdf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{OrientedBox, Vec2};
use crate::planner::Trajectory;
use crate::prediction::{Cov2, GaussianState, PredictionSet};

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("trajectory has {trajectory} steps of {traj_dt} s but predictions cover {predicted} steps of {pred_dt} s")]
    TimestepMismatch {
        trajectory: usize,
        traj_dt: f64,
        predicted: usize,
        pred_dt: f64,
    },
}

/// Ego footprint used for risk, optionally enlarged by `inflation` on every
/// side to cover the other party's extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoBox {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub inflation: f64,
}

impl EgoBox {
    pub fn inflated(&self) -> OrientedBox {
        OrientedBox {
            center: self.center,
            heading: self.heading,
            half_length: self.half_length + self.inflation,
            half_width: self.half_width + self.inflation,
        }
    }
}

/// Collision probability together with whether the covariance was too close
/// to singular for the bivariate formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionEstimate {
    pub p: f64,
    pub degenerate: bool,
}

/// Probability mass of `N(μ, Σ)` inside the inflated box.
pub fn collision_probability(g: &GaussianState, ego: &EgoBox) -> f64 {
    collision_probability_flagged(g, ego).p
}

pub fn collision_probability_flagged(g: &GaussianState, ego: &EgoBox) -> CollisionEstimate {
    let bx = ego.inflated();
    let mu = (g.mean - bx.center).rotate(-bx.heading);
    let cov = g.cov.rotated(-bx.heading);
    let (hl, hw) = (bx.half_length, bx.half_width);

    if cov.det() < 1e-12 {
        return CollisionEstimate {
            p: degenerate_probability(mu, &cov, hl, hw),
            degenerate: true,
        };
    }

    let (sx, sy) = (cov.xx.sqrt(), cov.yy.sqrt());
    let mut rho = cov.xy / (sx * sy);
    let mut xs = [(-hl - mu.x) / sx, (hl - mu.x) / sx];
    let mut ys = [(-hw - mu.y) / sy, (hw - mu.y) / sy];
    // Keep the box on the lower side of each axis so the four CDF values are
    // small and their differences do not cancel.
    if xs[0] + xs[1] > 0.0 {
        xs = [-xs[1], -xs[0]];
        rho = -rho;
    }
    if ys[0] + ys[1] > 0.0 {
        ys = [-ys[1], -ys[0]];
        rho = -rho;
    }
    let p = bvn_cdf(xs[1], ys[1], rho) - bvn_cdf(xs[0], ys[1], rho) - bvn_cdf(xs[1], ys[0], rho)
        + bvn_cdf(xs[0], ys[0], rho);
    CollisionEstimate {
        p: p.clamp(0.0, 1.0),
        degenerate: false,
    }
}

/// Near-singular covariance: a point mass, or a 1D Gaussian along the major
/// axis clipped against the box.
fn degenerate_probability(mu: Vec2, cov: &Cov2, hl: f64, hw: f64) -> f64 {
    let inside = |p: Vec2| p.x.abs() <= hl && p.y.abs() <= hw;
    let (l1, _, dir) = cov.eigen();
    if l1 < 1e-12 {
        return if inside(mu) { 1.0 } else { 0.0 };
    }
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (m, d, half) in [(mu.x, dir.x, hl), (mu.y, dir.y, hw)] {
        if d.abs() < 1e-15 {
            if m.abs() > half {
                return 0.0;
            }
        } else {
            let (a, b) = ((-half - m) / d, (half - m) / d);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    if hi <= lo {
        return 0.0;
    }
    let s = l1.sqrt();
    (norm_cdf(hi / s) - norm_cdf(lo / s)).clamp(0.0, 1.0)
}

/// Fraction of `n` samples from `N(μ, Σ)` inside the inflated box.
pub fn mc_collision_probability(g: &GaussianState, ego: &EgoBox, n: usize, seed: u64) -> f64 {
    assert!(n >= 1);
    let bx = ego.inflated();
    let c = &g.cov;
    let l11 = c.xx.max(0.0).sqrt();
    let l21 = if l11 > 0.0 { c.xy / l11 } else { 0.0 };
    let l22 = (c.yy - l21 * l21).max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..n)
        .filter(|_| {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let p = g.mean + Vec2::new(l11 * z1, l21 * z1 + l22 * z2);
            let local = bx.to_local(p);
            local.x.abs() < bx.half_length && local.y.abs() < bx.half_width
        })
        .count();
    hits as f64 / n as f64
}

/// Speed change imparted to body A in a collision with body B, where the
/// bodies' velocities meet at angle `alpha`.
pub fn delta_v(m_a: f64, m_b: f64, v_a: f64, v_b: f64, alpha: f64) -> f64 {
    let closing = (v_a * v_a + v_b * v_b - 2.0 * v_a * v_b * alpha.cos()).max(0.0);
    m_b / (m_a + m_b) * closing.sqrt()
}

/// Logistic injury-probability coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmCoeffs {
    pub c0: f64,
    pub c1: f64,
    pub c_area: f64,
}

impl Default for HarmCoeffs {
    fn default() -> Self {
        Self {
            c0: 6.0,
            c1: 0.35,
            c_area: 0.8,
        }
    }
}

/// Probability of severe injury for a speed change of `dv`.
pub fn harm(dv: f64, coeffs: &HarmCoeffs) -> f64 {
    1.0 / (1.0 + (coeffs.c0 - coeffs.c1 * dv - coeffs.c_area).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskThresholds {
    pub h_max: f64,
    pub r_max: f64,
}

impl Default for RiskThresholds {
    fn default() -> Self {
        Self {
            h_max: 0.99,
            r_max: 0.075,
        }
    }
}

impl RiskThresholds {
    pub const UNBOUNDED: RiskThresholds = RiskThresholds {
        h_max: 1.0,
        r_max: f64::INFINITY,
    };
}

/// Settings shared by every risk assessment in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskParams {
    pub coeffs: HarmCoeffs,
    /// Harm only counts toward the worst case where `p` exceeds this.
    pub p_gate: f64,
    pub ego_mass: f64,
    pub ego_half_length: f64,
    pub ego_half_width: f64,
    pub inflation: f64,
    /// Obstacles further than this many standard deviations from the box
    /// are treated as `p = 0`.
    pub cull_sigmas: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            coeffs: HarmCoeffs::default(),
            p_gate: 1e-4,
            ego_mass: 1500.0,
            ego_half_length: 2.25,
            ego_half_width: 0.9,
            inflation: 0.5,
            cull_sigmas: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub step: usize,
    pub t: f64,
    pub agent: u32,
    pub p: f64,
    pub h: f64,
    pub r: f64,
}

/// Per-step, per-agent risk of one trajectory. Pairs not listed had a
/// collision probability of zero (culled or underflowed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub entries: Vec<RiskEntry>,
    /// Worst harm over pairs with `p > p_gate`.
    pub max_harm: f64,
    pub max_risk: f64,
    pub max_probability: f64,
    pub sum_probability: f64,
    pub degenerate: usize,
    pub valid: bool,
}

impl RiskReport {
    pub fn empty(valid: bool) -> Self {
        Self {
            entries: Vec::new(),
            max_harm: 0.0,
            max_risk: 0.0,
            max_probability: 0.0,
            sum_probability: 0.0,
            degenerate: 0,
            valid,
        }
    }
}

fn outside_reach(g: &GaussianState, bx: &OrientedBox, sigmas: f64) -> bool {
    let reach = bx.half_length.hypot(bx.half_width) + sigmas * g.cov.eigen().0.max(0.0).sqrt();
    g.mean.distance(bx.center) > reach
}

/// Evaluates every future step of `traj` (step 0 is the present and is
/// skipped) against every predicted agent and applies the worst-case
/// thresholds.
pub fn assess_trajectory(
    traj: &Trajectory,
    preds: &PredictionSet,
    params: &RiskParams,
    thresholds: &RiskThresholds,
) -> Result<RiskReport, RiskError> {
    if (traj.dt - preds.dt).abs() > 1e-9 || traj.points.len() > preds.steps + 1 {
        return Err(RiskError::TimestepMismatch {
            trajectory: traj.points.len(),
            traj_dt: traj.dt,
            predicted: preds.steps + 1,
            pred_dt: preds.dt,
        });
    }
    let mut report = RiskReport::empty(true);
    for (k, pt) in traj.points.iter().enumerate().skip(1) {
        let ego = EgoBox {
            center: pt.position,
            heading: pt.heading,
            half_length: params.ego_half_length,
            half_width: params.ego_half_width,
            inflation: params.inflation,
        };
        let bx = ego.inflated();
        let ego_vel = Vec2::from_angle(pt.heading) * pt.v;
        for agent in &preds.agents {
            let g = &agent.states[k];
            if outside_reach(g, &bx, params.cull_sigmas) {
                continue;
            }
            let est = collision_probability_flagged(g, &ego);
            report.degenerate += est.degenerate as usize;
            if est.p <= 0.0 {
                continue;
            }
            let other = agent.velocities[k];
            let alpha = if other.norm() > 0.0 && pt.v > 0.0 {
                (other.normalized().dot(ego_vel.normalized())).clamp(-1.0, 1.0).acos()
            } else {
                0.0
            };
            let dv = delta_v(agent.mass, params.ego_mass, other.norm(), pt.v, alpha);
            let h = harm(dv, &params.coeffs);
            let r = est.p * h;
            if est.p > params.p_gate {
                report.max_harm = report.max_harm.max(h);
            }
            report.max_risk = report.max_risk.max(r);
            report.max_probability = report.max_probability.max(est.p);
            report.sum_probability += est.p;
            report.entries.push(RiskEntry {
                step: k,
                t: g.t,
                agent: agent.id,
                p: est.p,
                h,
                r,
            });
        }
    }
    report.valid = report.max_harm < thresholds.h_max && report.max_risk < thresholds.r_max;
    Ok(report)
}
