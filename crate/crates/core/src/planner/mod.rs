//! Frenet-frame trajectory sampling and the safety funnel.
//!
//! Candidates combine a quintic lateral profile with a quartic
//! velocity-keeping longitudinal profile. Feasible candidates are ranked by
//! base cost and the cheapest one passing the profile's harm and risk limits
//! is returned; if none passes, the vehicle brakes along its current path.

mod poly;

pub use poly::{Quartic, Quintic};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{distance_to_polygon, polygon_contains, Polyline, Vec2};
use crate::prediction::PredictionSet;
use crate::risk::{assess_trajectory, RiskParams, RiskReport, RiskThresholds};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EgoState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub acceleration: f64,
    /// Arc length along the reference path.
    pub s: f64,
    /// Lateral offset from the reference path, positive to the left.
    pub d: f64,
    pub d_dot: f64,
    pub d_ddot: f64,
}

impl EgoState {
    /// State at rest on `reference` at the projection of `position`.
    pub fn on_reference(reference: &Polyline, position: Vec2, heading: f64, speed: f64) -> Self {
        let (s, d) = reference.lateral_offset(position);
        Self {
            position: reference.frenet_to_cartesian(s, d),
            heading,
            speed,
            acceleration: 0.0,
            s,
            d,
            d_dot: 0.0,
            d_ddot: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajPoint {
    pub t: f64,
    pub position: Vec2,
    pub heading: f64,
    pub v: f64,
    pub a: f64,
    pub kappa: f64,
    pub s: f64,
    pub s_dot: f64,
    pub s_ddot: f64,
    pub s_dddot: f64,
    pub d: f64,
    pub d_dot: f64,
    pub d_ddot: f64,
    pub d_dddot: f64,
}

/// End conditions a candidate was sampled with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub d_end: f64,
    pub v_end: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajPoint>,
    pub dt: f64,
    /// `None` for the braking fallback.
    pub sample: Option<Sample>,
    pub cost: f64,
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl Trajectory {
    pub fn from_points(points: Vec<TrajPoint>, dt: f64) -> Self {
        Self {
            points,
            dt,
            sample: None,
            cost: 0.0,
            feasible: true,
            violations: Vec::new(),
        }
    }

    pub fn horizon(&self) -> f64 {
        (self.points.len().saturating_sub(1)) as f64 * self.dt
    }

    /// The ego state after `k` steps along this trajectory.
    pub fn state_at(&self, k: usize) -> EgoState {
        let p = &self.points[k.min(self.points.len() - 1)];
        EgoState {
            position: p.position,
            heading: p.heading,
            speed: p.v,
            acceleration: p.a,
            s: p.s,
            d: p.d,
            d_dot: p.d_dot,
            d_ddot: p.d_ddot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    VMin,
    VMax,
    AMax,
    KappaMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub v_max: f64,
    pub a_max: f64,
    /// Deceleration of the braking fallback (negative).
    pub a_min: f64,
    pub kappa_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            v_max: 14.0,
            a_max: 3.0,
            a_min: -8.0,
            kappa_max: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub jerk: f64,
    pub velocity: f64,
    pub lateral: f64,
    pub terminal: f64,
    /// Weight of summed collision probability (baseline profile only).
    pub collision: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            jerk: 0.05,
            velocity: 1.0,
            lateral: 0.5,
            terminal: 0.5,
            collision: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub d_end: Vec<f64>,
    /// Terminal speeds as multiples of the desired speed.
    pub v_end_factors: Vec<f64>,
    pub horizons: Vec<f64>,
    pub dt: f64,
    /// Candidates starting or ending below this speed (m/s) plan the lateral
    /// offset over arc length instead of time, so it only changes while the
    /// vehicle moves.
    pub low_speed: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            d_end: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            v_end_factors: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25],
            horizons: vec![2.0, 3.0, 4.0],
            dt: 0.1,
            low_speed: 1.0,
        }
    }
}

impl SamplingConfig {
    pub fn max_horizon(&self) -> f64 {
        self.horizons.iter().copied().fold(0.0, f64::max)
    }

    pub fn steps(&self) -> usize {
        (self.max_horizon() / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    RiskAware,
    Aggressive,
    Baseline,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::RiskAware, Profile::Aggressive, Profile::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Profile::RiskAware => "risk_aware",
            Profile::Aggressive => "aggressive",
            Profile::Baseline => "baseline",
        }
    }

    pub fn thresholds(self, configured: &RiskThresholds) -> RiskThresholds {
        match self {
            Profile::RiskAware => *configured,
            Profile::Aggressive | Profile::Baseline => RiskThresholds::UNBOUNDED,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "risk_aware" => Ok(Profile::RiskAware),
            "aggressive" => Ok(Profile::Aggressive),
            "baseline" => Ok(Profile::Baseline),
            other => Err(format!("unknown profile `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub sampling: SamplingConfig,
    pub limits: Limits,
    pub weights: CostWeights,
    pub desired_speed: f64,
    pub thresholds: RiskThresholds,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            limits: Limits::default(),
            weights: CostWeights::default(),
            desired_speed: 5.0,
            thresholds: RiskThresholds::default(),
        }
    }
}

fn frenet_point(reference: &Polyline, t: f64, s: [f64; 4], d: [f64; 4], path_kappa: Option<f64>) -> TrajPoint {
    let ref_heading = reference.heading_at(s[0]);
    let v = s[1].hypot(d[1]);
    let (a, kappa) = if v > 1e-9 {
        ((s[1] * s[2] + d[1] * d[2]) / v, (s[1] * d[2] - d[1] * s[2]) / (v * v * v))
    } else {
        (s[2], 0.0)
    };
    TrajPoint {
        t,
        position: reference.frenet_to_cartesian(s[0], d[0]),
        heading: ref_heading + d[1].atan2(s[1]),
        v,
        a,
        kappa: path_kappa.unwrap_or(kappa),
        s: s[0],
        s_dot: s[1],
        s_ddot: s[2],
        s_dddot: s[3],
        d: d[0],
        d_dot: d[1],
        d_ddot: d[2],
        d_dddot: d[3],
    }
}

/// Lateral profile given as a function of arc length travelled.
struct ArcLateral {
    s0: f64,
    span: f64,
    poly: Option<Quintic>,
    d_hold: f64,
}

impl ArcLateral {
    /// Time derivatives of `d` and the path curvature at longitudinal state `s`.
    fn eval(&self, s: [f64; 4]) -> ([f64; 4], f64) {
        let x = s[0] - self.s0;
        let [d, d1, d2, d3] = match &self.poly {
            Some(q) if x < self.span => q.eval(x.max(0.0)),
            Some(q) => [q.eval(self.span)[0], 0.0, 0.0, 0.0],
            None => [self.d_hold, 0.0, 0.0, 0.0],
        };
        let [_, v, a, j] = s;
        let dt = [
            d,
            d1 * v,
            d2 * v * v + d1 * a,
            d3 * v * v * v + 3.0 * d2 * v * a + d1 * j,
        ];
        (dt, d2 / (1.0 + d1 * d1).powf(1.5))
    }
}

/// Builds one candidate over `steps` intervals. After the sampled end time
/// the vehicle holds its terminal speed and offset. When the start or end
/// speed is below `low_speed` the lateral quintic runs over the arc length
/// covered by the longitudinal profile rather than over time.
pub fn build_candidate(
    state: &EgoState,
    reference: &Polyline,
    sample: Sample,
    dt: f64,
    steps: usize,
    low_speed: f64,
) -> Trajectory {
    let lon = Quartic::new(state.s, state.speed, state.acceleration, sample.v_end, 0.0, sample.t_end);
    let end_s = lon.eval(sample.t_end)[0];
    let lon_at = |t: f64| {
        if t <= sample.t_end {
            lon.eval(t)
        } else {
            [end_s + sample.v_end * (t - sample.t_end), sample.v_end, 0.0, 0.0]
        }
    };
    let points = if state.speed.min(sample.v_end) < low_speed {
        let span = end_s - state.s;
        let slope = (state.heading - reference.heading_at(state.s)).tan().clamp(-1.0, 1.0);
        let arc = ArcLateral {
            s0: state.s,
            span,
            poly: (span > 1e-3).then(|| Quintic::new(state.d, slope, 0.0, sample.d_end, 0.0, 0.0, span)),
            d_hold: state.d,
        };
        (0..=steps)
            .map(|k| {
                let t = k as f64 * dt;
                let s = lon_at(t);
                let (d, kappa) = arc.eval(s);
                frenet_point(reference, t, s, d, Some(kappa))
            })
            .collect()
    } else {
        let lat = Quintic::new(state.d, state.d_dot, state.d_ddot, sample.d_end, 0.0, 0.0, sample.t_end);
        (0..=steps)
            .map(|k| {
                let t = k as f64 * dt;
                let d = if t <= sample.t_end {
                    lat.eval(t)
                } else {
                    [sample.d_end, 0.0, 0.0, 0.0]
                };
                frenet_point(reference, t, lon_at(t), d, None)
            })
            .collect()
    };
    Trajectory {
        points,
        dt,
        sample: Some(sample),
        cost: 0.0,
        feasible: true,
        violations: Vec::new(),
    }
}

/// Every `(d_end, v_end, T)` combination in grid order, `d_end` outermost.
/// Lateral targets are clipped to the lane half-width.
pub fn generate_candidates(
    state: &EgoState,
    reference: &Polyline,
    cfg: &SamplingConfig,
    desired_speed: f64,
    lane_half_width: f64,
) -> Vec<Trajectory> {
    let steps = cfg.steps();
    let mut samples = Vec::new();
    for &d in &cfg.d_end {
        for &f in &cfg.v_end_factors {
            for &t in &cfg.horizons {
                samples.push(Sample {
                    d_end: d.clamp(-lane_half_width, lane_half_width),
                    v_end: f * desired_speed,
                    t_end: t,
                });
            }
        }
    }
    samples
        .into_par_iter()
        .map(|s| build_candidate(state, reference, s, cfg.dt, steps, cfg.low_speed))
        .collect()
}

/// Checks speed, acceleration and curvature limits at every point.
pub fn feasibility_check(traj: &Trajectory, limits: &Limits) -> (bool, Vec<Violation>) {
    let mut v = Vec::new();
    let mut flag = |cond: bool, which: Violation| {
        if cond && !v.contains(&which) {
            v.push(which);
        }
    };
    for p in &traj.points {
        flag(p.s_dot < -1e-9, Violation::VMin);
        flag(p.v > limits.v_max + 1e-9, Violation::VMax);
        flag(p.a.abs() > limits.a_max + 1e-9, Violation::AMax);
        flag(p.kappa.abs() > limits.kappa_max + 1e-9, Violation::KappaMax);
    }
    (v.is_empty(), v)
}

/// Jerk, speed-tracking and lateral-offset integrals plus the final
/// distance to the goal region.
pub fn base_cost(traj: &Trajectory, weights: &CostWeights, desired_speed: f64, goal_region: &[Vec2]) -> f64 {
    let dt = traj.dt;
    let (mut jerk, mut speed, mut lateral) = (0.0, 0.0, 0.0);
    for p in &traj.points[1..] {
        jerk += (p.s_dddot * p.s_dddot + p.d_dddot * p.d_dddot) * dt;
        speed += (p.v - desired_speed).powi(2) * dt;
        lateral += p.d * p.d * dt;
    }
    let end = traj.points.last().unwrap().position;
    let terminal = if goal_region.len() < 3 || polygon_contains(goal_region, end) {
        0.0
    } else {
        distance_to_polygon(goal_region, end)
    };
    weights.jerk * jerk + weights.velocity * speed + weights.lateral * lateral + weights.terminal * terminal
}

/// Braking at `a_min` along the current path, keeping the lateral offset.
pub fn braking_fallback(state: &EgoState, reference: &Polyline, limits: &Limits, dt: f64, steps: usize) -> Trajectory {
    let decel = -limits.a_min.min(-1e-9);
    let stop_t = state.speed / decel;
    let points = (0..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            let tt = t.min(stop_t);
            let s = state.s + state.speed * tt - 0.5 * decel * tt * tt;
            let v = (state.speed - decel * t).max(0.0);
            let a = if t < stop_t { -decel } else { 0.0 };
            frenet_point(reference, t, [s, v, a, 0.0], [state.d, 0.0, 0.0, 0.0], None)
        })
        .collect();
    Trajectory {
        points,
        dt,
        sample: None,
        cost: 0.0,
        feasible: true,
        violations: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CandidateStats {
    pub count: usize,
    pub feasible: usize,
    pub valid: usize,
    /// Position of the chosen candidate in generation order.
    pub selected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub trajectory: Trajectory,
    pub report: RiskReport,
    pub stats: CandidateStats,
    pub fallback: bool,
}

/// Everything the planner needs to know about the road.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    pub reference: &'a Polyline,
    pub lane_half_width: f64,
    pub goal_region: &'a [Vec2],
}

/// Runs the funnel: generate, drop infeasible, rank by cost, return the
/// cheapest candidate passing the profile's thresholds.
pub fn plan(
    state: &EgoState,
    ctx: &PlanContext,
    preds: &PredictionSet,
    cfg: &PlannerConfig,
    risk: &RiskParams,
    profile: Profile,
) -> PlanOutcome {
    let thresholds = profile.thresholds(&cfg.thresholds);
    let candidates = generate_candidates(state, ctx.reference, &cfg.sampling, cfg.desired_speed, ctx.lane_half_width);
    let count = candidates.len();
    let mut assessed: Vec<(usize, Trajectory, RiskReport)> = candidates
        .into_par_iter()
        .enumerate()
        .filter_map(|(i, mut traj)| {
            let (ok, violations) = feasibility_check(&traj, &cfg.limits);
            traj.feasible = ok;
            traj.violations = violations;
            if !ok {
                return None;
            }
            let report = assess_trajectory(&traj, preds, risk, &thresholds).expect("shared timestep grid");
            traj.cost = base_cost(&traj, &cfg.weights, cfg.desired_speed, ctx.goal_region);
            if profile == Profile::Baseline {
                traj.cost += cfg.weights.collision * report.sum_probability;
            }
            Some((i, traj, report))
        })
        .collect();
    assessed.sort_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then(a.0.cmp(&b.0)));
    let stats = CandidateStats {
        count,
        feasible: assessed.len(),
        valid: assessed.iter().filter(|(_, _, r)| r.valid).count(),
        selected: None,
    };
    if let Some(pos) = assessed.iter().position(|(_, _, r)| r.valid) {
        let (i, trajectory, report) = assessed.swap_remove(pos);
        return PlanOutcome {
            trajectory,
            report,
            stats: CandidateStats {
                selected: Some(i),
                ..stats
            },
            fallback: false,
        };
    }
    let trajectory = braking_fallback(state, ctx.reference, &cfg.limits, cfg.sampling.dt, cfg.sampling.steps());
    let report = assess_trajectory(&trajectory, preds, risk, &thresholds).expect("shared timestep grid");
    PlanOutcome {
        trajectory,
        report,
        stats,
        fallback: true,
    }
}
