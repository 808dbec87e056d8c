//! The synchronous simulation loop: pedestrians step, predictions are
//! rebuilt, the vehicle plans and advances, collisions are checked.

mod metrics;
mod trace;

pub use metrics::{summary_csv, Metrics, Stat, SummaryRow, SUMMARY_HEADER};
pub use trace::{
    write_atomic, EgoRecord, EndRecord, ObstacleRecord, PedestrianRecord, PlanRecord, PredictionRecord,
    Snapshot, TickRecord, Trace, TraceError, TraceHeader, TraceRecord, TRACE_VERSION,
};

use metrics::MetricsAccumulator;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{polygon_contains, OrientedBox, Polyline, Vec2};
use crate::pedsim::{step_pedestrians, ForceParams, Pedestrian, VehicleFootprint};
use crate::planner::{plan, EgoState, PlanContext, PlanOutcome, PlannerConfig, Profile};
use crate::policy::{default_max_iter, ActionSet, default_tolerance, value_iteration, PolicyCache, PolicyError, PolicyField};
use crate::prediction::{predict_all, predict_vehicle_paths, PredictionParams, PredictionSet, VehicleAgent, VehicleState};
use crate::risk::RiskParams;
use crate::scenario::{rasterize, spawn_pedestrians, Scenario, ScenarioError, SpawnConfig, StateCosts};

/// Agent ids of obstacles in predictions start here; pedestrians use their own ids.
pub const OBSTACLE_ID_BASE: u32 = 1_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid config: {field}: {message}")]
    Config { field: String, message: String },
}

fn config_error(field: &str, message: impl Into<String>) -> SimError {
    SimError::Config {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySettings {
    pub actions: usize,
    pub cell_size: f64,
    pub state_costs: StateCosts,
    /// Defaults to a millionth of the cheapest cell cost.
    pub tolerance: Option<f64>,
    /// Defaults to ten times the grid's width plus height.
    pub max_iterations: Option<usize>,
}

impl Default for PolicySettings {
    fn default() -> Self {
        Self {
            actions: 16,
            cell_size: 1.0,
            state_costs: StateCosts::default(),
            tolerance: None,
            max_iterations: None,
        }
    }
}

/// Everything a run needs beyond the scenario. The planner's sampling step
/// is replaced by `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dt: f64,
    pub max_ticks: usize,
    pub seed: u64,
    pub profile: Profile,
    pub forces: ForceParams,
    pub spawn: SpawnConfig,
    /// Explicit initial pedestrians; when present nothing is spawned.
    pub pedestrians: Option<Vec<Pedestrian>>,
    pub planner: PlannerConfig,
    pub risk: RiskParams,
    pub prediction: PredictionParams,
    pub policy: PolicySettings,
    /// Step pedestrians before planning within a tick.
    pub pedestrians_first: bool,
    /// Ego speeds below this count as frozen (m/s).
    pub freeze_speed: f64,
    /// Keep every n-th predicted state in trace records; 0 keeps none.
    pub trace_prediction_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_ticks: 100,
            seed: 0,
            profile: Profile::RiskAware,
            forces: ForceParams::default(),
            spawn: SpawnConfig::default(),
            pedestrians: None,
            planner: PlannerConfig::default(),
            risk: RiskParams::default(),
            prediction: PredictionParams::default(),
            policy: PolicySettings::default(),
            pedestrians_first: true,
            freeze_speed: 0.1,
            trace_prediction_stride: 10,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config_error("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |v: f64, field: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_error(field, "must be positive"))
            }
        };
        positive(self.dt, "dt")?;
        positive(self.forces.tau, "forces.tau")?;
        positive(self.forces.ped_range, "forces.ped_range")?;
        positive(self.forces.vehicle_range, "forces.vehicle_range")?;
        if !(self.forces.half_fov > 0.0 && self.forces.half_fov <= std::f64::consts::PI) {
            return Err(config_error("forces.half_fov", "must be in (0, pi]"));
        }
        if !(self.forces.fov_scale > 0.0 && self.forces.fov_scale <= 1.0) {
            return Err(config_error("forces.fov_scale", "must be in (0, 1]"));
        }
        positive(self.planner.desired_speed, "planner.desired_speed")?;
        let s = &self.planner.sampling;
        if s.d_end.is_empty() || s.v_end_factors.is_empty() || s.horizons.is_empty() {
            return Err(config_error("planner.sampling", "grids must be non-empty"));
        }
        if s.horizons.iter().any(|&t| !(t > 0.0)) {
            return Err(config_error("planner.sampling.horizons", "must be positive"));
        }
        let l = &self.planner.limits;
        positive(l.v_max, "planner.limits.v_max")?;
        positive(l.a_max, "planner.limits.a_max")?;
        positive(l.kappa_max, "planner.limits.kappa_max")?;
        if !(l.a_min < 0.0) {
            return Err(config_error("planner.limits.a_min", "must be negative"));
        }
        let th = &self.planner.thresholds;
        if !(th.h_max > 0.0 && th.h_max <= 1.0) {
            return Err(config_error("planner.thresholds.h_max", "must be in (0, 1]"));
        }
        if !(th.r_max > 0.0 && th.r_max <= 1.0) {
            return Err(config_error("planner.thresholds.r_max", "must be in (0, 1]"));
        }
        if self.risk.coeffs.c1 < 0.0 || !self.risk.coeffs.c0.is_finite() || !self.risk.coeffs.c_area.is_finite() {
            return Err(config_error("risk.coeffs", "need finite coefficients with c1 >= 0"));
        }
        positive(self.risk.ego_half_length, "risk.ego_half_length")?;
        positive(self.risk.ego_half_width, "risk.ego_half_width")?;
        if self.risk.inflation < 0.0 {
            return Err(config_error("risk.inflation", "must be non-negative"));
        }
        positive(self.policy.cell_size, "policy.cell_size")?;
        positive(self.spawn.mean_cluster_spacing, "spawn.mean_cluster_spacing")?;
        if !(self.spawn.mean_cluster_size >= 1.0) {
            return Err(config_error("spawn.mean_cluster_size", "must be at least 1"));
        }
        if let Some(peds) = &self.pedestrians {
            for (i, p) in peds.iter().enumerate() {
                if !(0.3..=3.0).contains(&p.desired_speed) {
                    return Err(config_error(&format!("pedestrians[{i}].desired_speed"), "must be in [0.3, 3]"));
                }
                if !(p.radius > 0.0 && p.radius <= 0.5) {
                    return Err(config_error(&format!("pedestrians[{i}].radius"), "must be in (0, 0.5]"));
                }
                if !(p.step_width > 0.0) {
                    return Err(config_error(&format!("pedestrians[{i}].step_width"), "must be positive"));
                }
            }
        }
        self.policy.state_costs.validate()?;
        Ok(())
    }

    fn planner_config(&self) -> PlannerConfig {
        let mut p = self.planner.clone();
        p.sampling.dt = self.dt;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleState {
    pub id: String,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub mass: f64,
    pub length: f64,
    pub width: f64,
}

impl ObstacleState {
    fn footprint(&self) -> OrientedBox {
        OrientedBox {
            center: self.position,
            heading: self.heading,
            half_length: 0.5 * self.length,
            half_width: 0.5 * self.width,
        }
    }

    fn vehicle_state(&self) -> VehicleState {
        VehicleState {
            position: self.position,
            heading: self.heading,
            speed: self.speed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: usize,
    pub time: f64,
    pub ego: EgoState,
    pub pedestrians: Vec<Pedestrian>,
    pub obstacles: Vec<ObstacleState>,
    pub collided: bool,
    pub reached_goal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Collision,
    GoalReached,
    MaxTicks,
}

/// Everything that stays fixed across ticks and seeds.
pub struct Simulation {
    pub scenario: Scenario,
    pub config: RunConfig,
    pub fields: Vec<PolicyField>,
    reference: Polyline,
    lane_half_width: f64,
    planner: PlannerConfig,
}

/// Result of one tick, used for metrics and trace records.
pub struct TickOutcome {
    pub world: WorldState,
    pub plan: PlanOutcome,
    pub predictions: PredictionSet,
}

/// Builds one policy field per goal, in goal order.
pub fn build_policies(
    scenario: &Scenario,
    settings: &PolicySettings,
    cache: Option<&PolicyCache>,
) -> Result<Vec<PolicyField>, SimError> {
    let grid = rasterize(scenario, settings.cell_size, &settings.state_costs)?;
    let tol = settings.tolerance.unwrap_or_else(|| default_tolerance(&grid));
    let max_iter = settings.max_iterations.unwrap_or_else(|| default_max_iter(&grid));
    let actions = ActionSet::new(settings.actions)?;
    scenario
        .goals
        .par_iter()
        .map(|&goal| match cache {
            Some(c) => c.load_or_build(&grid, goal, settings.actions, tol, max_iter).map(|(f, _)| f),
            None => value_iteration(&grid, goal, &actions, tol, max_iter),
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(SimError::from)
}

impl Simulation {
    pub fn new(scenario: Scenario, config: RunConfig, cache: Option<&PolicyCache>) -> Result<Self, SimError> {
        scenario.validate()?;
        config.validate()?;
        let fields = build_policies(&scenario, &config.policy, cache)?;
        Self::with_fields(scenario, config, fields)
    }

    /// Reuses already-built policy fields (one per goal).
    pub fn with_fields(scenario: Scenario, config: RunConfig, fields: Vec<PolicyField>) -> Result<Self, SimError> {
        config.validate()?;
        if fields.len() != scenario.goals.len() {
            return Err(config_error("policy", "need one field per goal"));
        }
        let lane = scenario
            .lane(&scenario.ego.lane)
            .ok_or_else(|| config_error("ego.lane", "unknown lane"))?;
        let reference = Polyline::new(lane.centerline.clone());
        let lane_half_width = 0.5 * lane.width;
        let planner = config.planner_config();
        Ok(Self {
            scenario,
            config,
            fields,
            reference,
            lane_half_width,
            planner,
        })
    }

    pub fn initial_state(&self, seed: u64) -> WorldState {
        let pedestrians = match &self.config.pedestrians {
            Some(p) => p.clone(),
            None => spawn_pedestrians(
                &self.scenario,
                &SpawnConfig {
                    seed,
                    ..self.config.spawn.clone()
                },
            ),
        };
        let e = &self.scenario.ego;
        let mut ego = EgoState::on_reference(&self.reference, e.position, e.heading, e.speed);
        ego.heading = self.reference.heading_at(ego.s);
        WorldState {
            tick: 0,
            time: 0.0,
            ego,
            pedestrians,
            obstacles: self
                .scenario
                .obstacles
                .iter()
                .map(|o| ObstacleState {
                    id: o.id.clone(),
                    position: o.position,
                    heading: o.heading,
                    speed: o.speed,
                    mass: o.mass,
                    length: o.length,
                    width: o.width,
                })
                .collect(),
            collided: false,
            reached_goal: false,
        }
    }

    fn ego_box(&self, ego: &EgoState) -> OrientedBox {
        OrientedBox {
            center: ego.position,
            heading: ego.heading,
            half_length: self.config.risk.ego_half_length,
            half_width: self.config.risk.ego_half_width,
        }
    }

    fn footprints(&self, world: &WorldState) -> Vec<VehicleFootprint> {
        let p = &self.config.prediction;
        let ego = VehicleState {
            position: world.ego.position,
            heading: world.ego.heading,
            speed: world.ego.speed,
        };
        std::iter::once(ego)
            .chain(world.obstacles.iter().map(ObstacleState::vehicle_state))
            .map(|v| VehicleFootprint {
                position: v.position,
                heading: v.heading,
                speed: v.speed,
                predicted_paths: predict_vehicle_paths(&v, &self.scenario.lanes, p.path_horizon, p.path_spacing).paths,
            })
            .collect()
    }

    fn predictions(&self, peds: &[Pedestrian], obstacles: &[ObstacleState]) -> PredictionSet {
        let agents: Vec<VehicleAgent> = obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| VehicleAgent {
                id: OBSTACLE_ID_BASE + i as u32,
                state: o.vehicle_state(),
                mass: o.mass,
            })
            .collect();
        predict_all(
            peds,
            &agents,
            &self.scenario.lanes,
            self.planner.sampling.steps() as f64 * self.config.dt,
            self.config.dt,
            &self.config.prediction,
        )
    }

    fn advance_obstacle(&self, o: &ObstacleState) -> ObstacleState {
        let dt = self.config.dt;
        let path = predict_vehicle_paths(&o.vehicle_state(), &self.scenario.lanes, 1.0, 0.05)
            .paths
            .swap_remove(0);
        let s = o.speed * dt;
        let mut next = o.clone();
        if path.length() > 0.0 {
            next.position = path.point_at(s);
            next.heading = path.heading_at(s.min(path.length()));
        }
        next
    }

    /// Runs one tick. `world` must not have terminated.
    pub fn step(&self, world: &WorldState) -> TickOutcome {
        let cfg = &self.config;
        let ctx = PlanContext {
            reference: &self.reference,
            lane_half_width: self.lane_half_width,
            goal_region: &self.scenario.ego.goal_region,
        };
        let footprints = self.footprints(world);
        let step_peds = |peds: &[Pedestrian]| step_pedestrians(peds, &footprints, &self.fields, &cfg.forces, cfg.dt);
        let (pedestrians, predictions, outcome) = if cfg.pedestrians_first {
            let peds = step_peds(&world.pedestrians);
            let preds = self.predictions(&peds, &world.obstacles);
            let out = plan(&world.ego, &ctx, &preds, &self.planner, &cfg.risk, cfg.profile);
            (peds, preds, out)
        } else {
            let preds = self.predictions(&world.pedestrians, &world.obstacles);
            let out = plan(&world.ego, &ctx, &preds, &self.planner, &cfg.risk, cfg.profile);
            (step_peds(&world.pedestrians), preds, out)
        };
        let ego = outcome.trajectory.state_at(1);
        let obstacles: Vec<ObstacleState> = world.obstacles.iter().map(|o| self.advance_obstacle(o)).collect();
        let ego_box = self.ego_box(&ego);
        let hit = pedestrians.iter().any(|p| ego_box.overlaps_disc(p.position, p.radius))
            || obstacles.iter().any(|o| ego_box.overlaps_box(&o.footprint()));
        let reached = polygon_contains(&self.scenario.ego.goal_region, ego.position);
        TickOutcome {
            world: WorldState {
                tick: world.tick + 1,
                time: (world.tick + 1) as f64 * cfg.dt,
                ego,
                pedestrians,
                obstacles,
                collided: world.collided || hit,
                reached_goal: world.reached_goal || reached,
            },
            plan: outcome,
            predictions,
        }
    }

    fn snapshot(world: &WorldState) -> Snapshot {
        Snapshot {
            ego: EgoRecord {
                position: world.ego.position,
                heading: world.ego.heading,
                speed: world.ego.speed,
                acceleration: world.ego.acceleration,
            },
            pedestrians: world
                .pedestrians
                .iter()
                .map(|p| PedestrianRecord {
                    id: p.id,
                    position: p.position,
                    velocity: p.velocity,
                    radius: p.radius,
                    arrived: p.arrived,
                })
                .collect(),
            obstacles: world
                .obstacles
                .iter()
                .map(|o| ObstacleRecord {
                    id: o.id.clone(),
                    position: o.position,
                    heading: o.heading,
                    speed: o.speed,
                    length: o.length,
                    width: o.width,
                })
                .collect(),
        }
    }

    fn tick_record(&self, out: &TickOutcome) -> TickRecord {
        let stride = self.config.trace_prediction_stride;
        let predictions = if stride == 0 {
            Vec::new()
        } else {
            out.predictions
                .agents
                .iter()
                .map(|a| PredictionRecord {
                    id: a.id,
                    kind: a.kind,
                    states: a.states.iter().step_by(stride).copied().collect(),
                })
                .collect()
        };
        let r = &out.plan.report;
        TickRecord {
            tick: out.world.tick,
            t: out.world.time,
            snapshot: Self::snapshot(&out.world),
            plan: PlanRecord {
                fallback: out.plan.fallback,
                max_risk: r.max_risk,
                max_harm: r.max_harm,
                max_probability: r.max_probability,
                stats: out.plan.stats,
                sample: out.plan.trajectory.sample,
                path: out.plan.trajectory.points.iter().map(|p| p.position).collect(),
            },
            risk: r.entries.clone(),
            predictions,
            collided: out.world.collided,
        }
    }

    /// Runs until collision, goal or `max_ticks`, optionally recording a trace.
    pub fn run_seed(&self, seed: u64, keep_trace: bool) -> (Option<Trace>, Metrics) {
        let mut world = self.initial_state(seed);
        let initial = Self::snapshot(&world);
        let mut acc = MetricsAccumulator::default();
        let mut ticks = Vec::new();
        let mut termination = Termination::MaxTicks;
        while world.tick < self.config.max_ticks {
            let out = self.step(&world);
            acc.record(
                out.world.ego.position.distance(world.ego.position),
                out.world.ego.speed,
                out.plan.report.max_risk,
                out.plan.fallback,
                self.config.dt,
                self.config.freeze_speed,
            );
            if keep_trace {
                ticks.push(self.tick_record(&out));
            }
            world = out.world;
            if world.collided {
                termination = Termination::Collision;
                break;
            }
            if world.reached_goal {
                termination = Termination::GoalReached;
                break;
            }
        }
        acc.metrics.collisions = world.collided as usize;
        acc.metrics.reached_goal = world.reached_goal;
        let metrics = acc.finish();
        let trace = keep_trace.then(|| Trace {
            header: TraceHeader {
                version: TRACE_VERSION,
                seed,
                profile: self.config.profile.name().to_string(),
                dt: self.config.dt,
                scenario: self.scenario.clone(),
                config: RunConfig {
                    seed,
                    ..self.config.clone()
                },
                initial,
            },
            ticks,
            end: EndRecord {
                termination,
                metrics: metrics.clone(),
            },
        });
        (trace, metrics)
    }
}

/// Single run with the configured seed.
pub fn run(scenario: &Scenario, cfg: &RunConfig, cache: Option<&PolicyCache>) -> Result<(Trace, Metrics), SimError> {
    let sim = Simulation::new(scenario.clone(), cfg.clone(), cache)?;
    let (trace, metrics) = sim.run_seed(cfg.seed, true);
    Ok((trace.expect("trace requested"), metrics))
}

/// Seeds for `n` runs, derived from `master`.
pub fn derive_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Per-run metrics for every profile over `n_seeds` derived seeds. The
/// same seeds (and therefore the same initial crowds) are used for every
/// profile, so results are paired.
pub fn batch(
    scenario: &Scenario,
    cfg: &RunConfig,
    profiles: &[Profile],
    n_seeds: usize,
    cache: Option<&PolicyCache>,
) -> Result<Vec<(Profile, Vec<Metrics>)>, SimError> {
    scenario.validate()?;
    cfg.validate()?;
    let fields = build_policies(scenario, &cfg.policy, cache)?;
    let seeds = derive_seeds(cfg.seed, n_seeds);
    profiles
        .iter()
        .map(|&profile| {
            let sim = Simulation::with_fields(
                scenario.clone(),
                RunConfig {
                    profile,
                    ..cfg.clone()
                },
                fields.clone(),
            )?;
            let runs = seeds.par_iter().map(|&s| sim.run_seed(s, false).1).collect();
            Ok((profile, runs))
        })
        .collect()
}

/// Summary rows in profile order.
pub fn summarize(results: &[(Profile, Vec<Metrics>)]) -> Vec<SummaryRow> {
    results
        .iter()
        .map(|(p, runs)| SummaryRow::aggregate(p.name(), runs))
        .collect()
}
