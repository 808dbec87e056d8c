mod common;

use std::sync::OnceLock;

use common::{dijkstra, random_grid, relative_error};
use crowdrisk::fixtures;
use crowdrisk::geom::{polygon_contains, Polyline, Vec2};
use crowdrisk::pedsim::{pedestrian_repulsion, step_pedestrians, ForceParams, Pedestrian};
use crowdrisk::planner::{
    base_cost, feasibility_check, generate_candidates, plan, EgoState, PlanContext, PlannerConfig, Profile,
    TrajPoint, Trajectory,
};
use crowdrisk::policy::{default_max_iter, default_tolerance, value_iteration, ActionSet, PolicyField};
use crowdrisk::prediction::{
    predict_all, predict_pedestrian, AgentKind, AgentPrediction, Cov2, GaussianState, PredictionParams,
    PredictionSet, VehicleAgent, VehicleState,
};
use crowdrisk::risk::{
    assess_trajectory, collision_probability, delta_v, harm, EgoBox, HarmCoeffs, RiskParams, RiskThresholds,
};
use crowdrisk::scenario::{load_scenario, rasterize, spawn_pedestrians, CostGrid, RegionKind, Scenario, SpawnConfig, StateCosts};
use crowdrisk::simloop::{PolicySettings, RunConfig, Simulation, Termination, Trace};
use proptest::prelude::*;

fn straight_road() -> Scenario {
    load_scenario(fixtures::STRAIGHT_ROAD).unwrap()
}

fn crosswalk() -> Scenario {
    load_scenario(fixtures::CROSSWALK).unwrap()
}

fn v2() -> impl Strategy<Value = Vec2> {
    (-20.0..20.0f64, -20.0..20.0f64).prop_map(|(x, y)| Vec2::new(x, y))
}

fn cov() -> impl Strategy<Value = Cov2> {
    (0.01..4.0f64, 0.01..4.0f64, -0.95..0.95f64).prop_map(|(a, b, rho)| Cov2::new(a, b, rho * (a * b).sqrt()))
}

fn ped(id: u32, position: Vec2, velocity: Vec2, desired_speed: f64) -> Pedestrian {
    Pedestrian {
        id,
        position,
        velocity,
        desired_speed,
        goal_index: 0,
        step_width: 0.1 * desired_speed,
        radius: 0.25,
        arrived: false,
    }
}

/// Open 40 m square with its goal in a corner.
fn open_field() -> &'static PolicyField {
    static FIELD: OnceLock<PolicyField> = OnceLock::new();
    FIELD.get_or_init(|| {
        let grid = CostGrid::from_costs(Vec2::new(-20.0, -20.0), 1.0, 40, 40, &vec![Some(1.0); 1600]).unwrap();
        let actions = ActionSet::new(16).unwrap();
        value_iteration(&grid, Vec2::new(19.5, 19.5), &actions, 1e-9, 10_000).unwrap()
    })
}

// ---------------------------------------------------------------- scenario

/// Road between two sidewalks with an optional crosswalk; every size drawn.
fn random_scenario() -> impl Strategy<Value = Scenario> {
    (20.0..150.0f64, 2.0..6.0f64, 5.0..14.0f64, proptest::option::of(0.2..0.8f64), 0.0..10.0f64)
        .prop_map(|(len, walk, road, cross_at, speed)| {
            let top = 2.0 * walk + road;
            let rect = |x0: f64, y0: f64, x1: f64, y1: f64| {
                vec![Vec2::new(x0, y0), Vec2::new(x1, y0), Vec2::new(x1, y1), Vec2::new(x0, y1)]
            };
            let mut text = serde_json::json!({
                "bounds": {"min": [0.0, 0.0], "max": [len, top]},
                "regions": [
                    {"id": "road", "kind": "road", "polygon": rect(0.0, walk, len, walk + road)},
                    {"id": "south", "kind": "sidewalk", "polygon": rect(0.0, 0.0, len, walk)},
                    {"id": "north", "kind": "sidewalk", "polygon": rect(0.0, walk + road, len, top)},
                ],
                "lanes": [{"id": "east", "centerline": [[0.0, walk + 0.25 * road], [len, walk + 0.25 * road]], "width": 0.5 * road}],
                "goals": [[0.5 * len, 0.5 * walk], [0.25 * len, top - 0.5 * walk]],
                "ego": {"position": [1.0, walk + 0.25 * road], "heading": 0.0, "speed": speed, "lane": "east",
                        "goal_region": rect(0.9 * len, walk, len, walk + road)},
            });
            if let Some(f) = cross_at {
                let x = f * len;
                text["regions"].as_array_mut().unwrap().push(serde_json::json!(
                    {"id": "cw", "kind": "crosswalk", "polygon": rect(x, walk, x + 3.0, walk + road)}
                ));
            }
            load_scenario(&text.to_string()).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spawned_pedestrians_lie_inside_sidewalks(seed in any::<u64>(), spacing in 2.0..20.0f64, spread in 0.1..1.5f64) {
        let s = straight_road();
        let cfg = SpawnConfig { seed, mean_cluster_spacing: spacing, position_stddev: spread, ..SpawnConfig::default() };
        let peds = spawn_pedestrians(&s, &cfg);
        for p in &peds {
            prop_assert!(s.regions_of(RegionKind::Sidewalk).any(|r| polygon_contains(&r.polygon, p.position)));
        }
        prop_assert_eq!(&peds, &spawn_pedestrians(&s, &cfg));
    }

    #[test]
    fn rasterization_is_deterministic_and_ordered(
        s in random_scenario(),
        cell in 0.3..3.0f64,
        sidewalk in 1.0..10.0f64,
        gaps in (0.1..20.0f64, 0.1..20.0f64),
    ) {
        let costs = StateCosts { sidewalk, crosswalk: sidewalk + gaps.0, road: sidewalk + gaps.0 + gaps.1 };
        let a = rasterize(&s, cell, &costs).unwrap();
        let b = rasterize(&s, cell, &costs).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
        for idx in (0..a.len()).filter(|&i| a.is_traversable(i)) {
            let c = a.cost(idx);
            prop_assert!(c == costs.road || c == costs.crosswalk || c == costs.sidewalk);
            let (ix, iy) = a.coords(idx);
            let center = a.cell_center(ix, iy);
            let in_kind = |k| s.regions_of(k).any(|r| polygon_contains(&r.polygon, center));
            // A cell whose center is on plain road is never cheaper than the crosswalk.
            if in_kind(RegionKind::Road) && !in_kind(RegionKind::Crosswalk) && !in_kind(RegionKind::Sidewalk) {
                prop_assert!(c >= costs.crosswalk);
            }
        }
    }

    #[test]
    fn scenario_json_roundtrip(s in random_scenario()) {
        let back = load_scenario(&s.to_json()).unwrap();
        prop_assert_eq!(back, s);
    }
}

// ---------------------------------------------------------------- policy

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn value_iteration_matches_dijkstra(seed in any::<u64>(), n in prop::sample::select(vec![4usize, 8, 16]), blocked in 0.0..0.35f64) {
        let (grid, goal) = random_grid(seed, 40, blocked);
        let actions = ActionSet::new(n).unwrap();
        let field = value_iteration(&grid, goal, &actions, default_tolerance(&grid), 100 * default_max_iter(&grid)).unwrap();
        let oracle = dijkstra(&grid, field.goal_cell, &actions);
        for (i, (&v, &o)) in field.cost_to_go.iter().zip(&oracle).enumerate() {
            prop_assert!(v.is_infinite() == o.is_infinite(), "cell {i}: {v} vs {o}");
            if o.is_finite() {
                prop_assert!(relative_error(v, o) <= 1e-9, "cell {i}: {v} vs {o}");
            }
        }
    }

    #[test]
    fn greedy_descent_reaches_the_goal(seed in any::<u64>(), blocked in 0.0..0.35f64) {
        let (grid, goal) = random_grid(seed, 40, blocked);
        let actions = ActionSet::new(16).unwrap();
        let field = value_iteration(&grid, goal, &actions, default_tolerance(&grid), 100 * default_max_iter(&grid)).unwrap();
        for start in (0..grid.len()).filter(|&i| field.cost_to_go[i].is_finite()) {
            let mut cell = start;
            let mut steps = 0;
            while cell != field.goal_cell {
                let next = field.next_cell(cell);
                prop_assert!(next.is_some(), "stuck at {cell}");
                let next = next.unwrap();
                prop_assert!(field.cost_to_go[next] < field.cost_to_go[cell]);
                cell = next;
                steps += 1;
                prop_assert!(steps <= grid.len());
            }
        }
    }

    #[test]
    fn costlier_roads_never_reduce_crosswalk_use(road in 21.0..400.0f64, extra in 0.0..400.0f64, start_x in 2.0..98.0f64) {
        let s = crosswalk();
        let actions = ActionSet::new(16).unwrap();
        let crossings = |road_cost: f64| {
            let costs = StateCosts { road: road_cost, ..StateCosts::default() };
            let grid = rasterize(&s, 1.0, &costs).unwrap();
            let field = value_iteration(&grid, s.goals[0], &actions, default_tolerance(&grid), default_max_iter(&grid)).unwrap();
            let mut cell = field.cell_of(Vec2::new(start_x, 1.5)).unwrap();
            let mut count = 0;
            while let Some(next) = field.next_cell(cell) {
                cell = next;
                let (ix, iy) = grid.coords(cell);
                count += usize::from(grid.cost(grid.index(ix, iy)) == costs.crosswalk);
            }
            count
        };
        prop_assert!(crossings(road + extra) >= crossings(road));
    }
}

#[test]
fn value_iteration_converges_on_every_fixture() {
    let actions = ActionSet::new(16).unwrap();
    for text in [fixtures::STRAIGHT_ROAD, fixtures::CROSSWALK, fixtures::SIDEWALK_200] {
        let s = load_scenario(text).unwrap();
        let grid = rasterize(&s, 1.0, &StateCosts::default()).unwrap();
        for &goal in &s.goals {
            let field = value_iteration(&grid, goal, &actions, 1e-6, default_max_iter(&grid)).unwrap();
            assert!(field.converged && field.iterations < default_max_iter(&grid));
        }
    }
}

// ---------------------------------------------------------------- pedsim

fn crowd() -> impl Strategy<Value = Vec<Pedestrian>> {
    prop::collection::vec((v2(), v2(), 0.3..3.0f64), 1..25).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (p, v, v0))| ped(i as u32, p * 0.8, v * 0.3, v0))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn speed_stays_capped_and_positions_use_new_velocity(peds in crowd(), amp in 0.0..50.0f64, dt in 0.01..0.5f64) {
        let params = ForceParams { ped_amplitude: amp, ..ForceParams::default() };
        let fields = [open_field().clone()];
        let next = step_pedestrians(&peds, &[], &fields, &params, dt);
        for (a, b) in peds.iter().zip(&next) {
            prop_assert!(b.velocity.norm() <= params.max_speed_factor * a.desired_speed * (1.0 + 1e-12));
            if !b.arrived {
                let expected = a.position + b.velocity * dt;
                prop_assert!((b.position - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn rollouts_are_bit_identical(peds in crowd(), ticks in 1usize..15) {
        let fields = [open_field().clone()];
        let params = ForceParams::default();
        let roll = || {
            let mut p = peds.clone();
            for _ in 0..ticks {
                p = step_pedestrians(&p, &[], &fields, &params, 0.1);
            }
            p
        };
        let (a, b) = (roll(), roll());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.position.x.to_bits(), y.position.x.to_bits());
            prop_assert_eq!(x.position.y.to_bits(), y.position.y.to_bits());
            prop_assert_eq!(x.velocity.x.to_bits(), y.velocity.x.to_bits());
            prop_assert_eq!(x.velocity.y.to_bits(), y.velocity.y.to_bits());
        }
    }

    #[test]
    fn stationary_repulsion_is_antisymmetric(a in v2(), b in v2(), v0 in 0.3..3.0f64) {
        prop_assume!(a.distance(b) > 1e-3);
        let params = ForceParams::default();
        let (pa, pb) = (ped(0, a, Vec2::ZERO, v0), ped(1, b, Vec2::ZERO, v0));
        let fab = pedestrian_repulsion(&pa, &pb, &params).force;
        let fba = pedestrian_repulsion(&pb, &pa, &params).force;
        prop_assert!((fab + fba).norm() <= 1e-12 * (1.0 + fab.norm()));
    }
}

// ---------------------------------------------------------------- prediction

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariances_stay_psd_and_grow(
        peds in crowd(),
        veh in (v2(), -3.2..3.2f64, 0.0..15.0f64),
        noise in (0.0..1.0f64, 0.0..2.0f64, 0.0..0.5f64),
    ) {
        let params = PredictionParams {
            pedestrian_noise: noise.0,
            vehicle_noise_longitudinal: noise.1,
            vehicle_noise_lateral: noise.2,
            ..PredictionParams::default()
        };
        let s = straight_road();
        let vehicles = [VehicleAgent {
            id: 99,
            state: VehicleState { position: veh.0 + Vec2::new(40.0, 10.0), heading: veh.1, speed: veh.2 },
            mass: 1500.0,
        }];
        let set = predict_all(&peds, &vehicles, &s.lanes, 3.0, 0.1, &params);
        prop_assert_eq!(set.agents.len(), peds.len() + 1);
        for agent in &set.agents {
            prop_assert_eq!(agent.states.len(), set.steps + 1);
            for w in agent.states.windows(2) {
                prop_assert!(w[0].cov.is_psd(1e-12) && w[1].cov.is_psd(1e-12));
                prop_assert!(w[1].cov.trace() >= w[0].cov.trace());
                prop_assert!(w[1].t > w[0].t);
            }
        }
    }

    #[test]
    fn noiseless_prediction_tracks_force_free_motion(p in v2(), v in v2(), dt in 0.05..0.5f64, steps in 1usize..40) {
        let horizon = steps as f64 * dt;
        let states = predict_pedestrian(&ped(0, p, v * 0.2, 1.3), horizon, dt, Cov2::isotropic(0.01), Cov2::ZERO);
        prop_assert_eq!(states.len(), steps + 1);
        let mut x = p;
        for (k, st) in states.iter().enumerate() {
            prop_assert!((st.mean - x).norm() < 1e-9 * (1.0 + x.norm()), "step {k}");
            prop_assert_eq!(st.cov, Cov2::isotropic(0.01));
            x = x + v * 0.2 * dt;
        }
    }
}

// ---------------------------------------------------------------- risk

fn ego_box() -> impl Strategy<Value = EgoBox> {
    (v2(), -3.2..3.2f64, 0.2..3.0f64, 0.2..1.5f64, 0.0..1.0f64).prop_map(|(c, h, hl, hw, inf)| EgoBox {
        center: c * 0.2,
        heading: h,
        half_length: hl,
        half_width: hw,
        inflation: inf,
    })
}

fn gaussian() -> impl Strategy<Value = GaussianState> {
    (v2(), cov()).prop_map(|(m, c)| GaussianState { t: 0.0, mean: m * 0.3, cov: c })
}

fn straight_trajectory(speed: f64, steps: usize, dt: f64) -> Trajectory {
    let points = (0..=steps)
        .map(|k| {
            let t = k as f64 * dt;
            TrajPoint { t, position: Vec2::new(speed * t, 0.0), v: speed, s: speed * t, s_dot: speed, ..TrajPoint::default() }
        })
        .collect();
    Trajectory::from_points(points, dt)
}

fn agents(raw: &[(Vec2, Vec2, f64)], steps: usize, dt: f64) -> Vec<AgentPrediction> {
    raw.iter()
        .enumerate()
        .map(|(i, &(p, v, var))| {
            let states: Vec<GaussianState> = (0..=steps)
                .map(|k| {
                    let t = k as f64 * dt;
                    GaussianState { t, mean: p + v * t, cov: Cov2::isotropic(var * (1.0 + t)) }
                })
                .collect();
            AgentPrediction { id: i as u32, kind: AgentKind::Pedestrian, mass: 75.0, velocities: vec![v; states.len()], states }
        })
        .collect()
}

fn agent_specs() -> impl Strategy<Value = Vec<(Vec2, Vec2, f64)>> {
    prop::collection::vec(
        ((0.0..30.0f64, -4.0..4.0f64), (-2.0..2.0f64, -2.0..2.0f64), 0.01..1.0f64)
            .prop_map(|((x, y), (vx, vy), var)| (Vec2::new(x, y), Vec2::new(vx, vy), var)),
        0..8,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn risk_terms_are_probabilities(specs in agent_specs(), speed in 0.0..14.0f64, c in (0.0..8.0f64, 0.0..1.0f64, 0.0..2.0f64)) {
        let dt = 0.1;
        let traj = straight_trajectory(speed, 30, dt);
        let preds = PredictionSet { dt, steps: 30, agents: agents(&specs, 30, dt) };
        let params = RiskParams { coeffs: HarmCoeffs { c0: c.0, c1: c.1, c_area: c.2 }, ..RiskParams::default() };
        let report = assess_trajectory(&traj, &preds, &params, &RiskThresholds::default()).unwrap();
        for e in &report.entries {
            for x in [e.p, e.h, e.r] {
                prop_assert!((0.0..=1.0).contains(&x));
            }
            prop_assert!(e.r <= e.p.min(e.h) + 1e-15);
        }
        prop_assert!(report.max_risk <= 1.0 && report.max_probability <= 1.0);
    }

    #[test]
    fn probability_is_rotation_invariant(g in gaussian(), ego in ego_box(), angle in -3.2..3.2f64) {
        let p = collision_probability(&g, &ego);
        let rg = GaussianState { t: 0.0, mean: g.mean.rotate(angle), cov: g.cov.rotated(angle) };
        let re = EgoBox { center: ego.center.rotate(angle), heading: ego.heading + angle, ..ego };
        prop_assert!((collision_probability(&rg, &re) - p).abs() <= 1e-9, "{p}");
    }

    #[test]
    fn inflation_never_lowers_probability(g in gaussian(), ego in ego_box(), extra in 0.0..1.0f64) {
        let bigger = EgoBox { inflation: ego.inflation + extra, ..ego };
        prop_assert!(collision_probability(&g, &bigger) >= collision_probability(&g, &ego) - 1e-12);
    }

    #[test]
    fn adding_an_agent_never_lowers_worst_risk(specs in agent_specs(), extra in agent_specs(), speed in 0.0..14.0f64) {
        let dt = 0.1;
        let traj = straight_trajectory(speed, 30, dt);
        let params = RiskParams { coeffs: HarmCoeffs { c0: 3.0, c1: 0.45, c_area: 1.0 }, ..RiskParams::default() };
        let mut all = specs.clone();
        all.extend(extra.iter().take(1));
        let r = |s: &[(Vec2, Vec2, f64)]| {
            let preds = PredictionSet { dt, steps: 30, agents: agents(s, 30, dt) };
            assess_trajectory(&traj, &preds, &params, &RiskThresholds::UNBOUNDED).unwrap().max_risk
        };
        prop_assert!(r(&all) >= r(&specs));
    }

    #[test]
    fn harm_grows_with_impact_and_striker_mass(
        dv in 0.0..30.0f64, more in 0.0..10.0f64,
        m in (1.0..3000.0f64, 1.0..3000.0f64, 0.0..2000.0f64),
        v in (0.0..15.0f64, 0.0..15.0f64, 0.0..6.3f64),
    ) {
        let c = HarmCoeffs::default();
        prop_assert!(harm(dv + more, &c) >= harm(dv, &c));
        let (victim, striker, heavier) = m;
        let light = delta_v(victim, striker, v.0, v.1, v.2);
        let heavy = delta_v(victim, striker + heavier, v.0, v.1, v.2);
        prop_assert!(heavy >= light);
        prop_assert!(harm(heavy, &c) >= harm(light, &c));
    }
}

// ---------------------------------------------------------------- planner

fn planning_case() -> impl Strategy<Value = (EgoState, Vec<(Vec2, Vec2, f64)>)> {
    (0.0..12.0f64, -1.0..1.0f64, -0.1..0.1f64, agent_specs()).prop_map(|(speed, d, heading, specs)| {
        let reference = Polyline::new(vec![Vec2::new(-10.0, 0.0), Vec2::new(200.0, 0.0)]);
        let mut state = EgoState::on_reference(&reference, Vec2::new(0.0, d), heading, speed);
        state.acceleration = 0.0;
        let specs = specs.into_iter().map(|(p, v, var)| (p + Vec2::new(5.0, 0.0), v, var)).collect();
        (state, specs)
    })
}

fn planning_setup() -> (Polyline, PlannerConfig, RiskParams) {
    let reference = Polyline::new(vec![Vec2::new(-10.0, 0.0), Vec2::new(200.0, 0.0)]);
    let cfg = PlannerConfig::default();
    let risk = RiskParams { coeffs: HarmCoeffs { c0: 3.0, c1: 0.45, c_area: 1.0 }, ..RiskParams::default() };
    (reference, cfg, risk)
}

const GOAL: [Vec2; 4] = [
    Vec2 { x: 150.0, y: -2.0 },
    Vec2 { x: 160.0, y: -2.0 },
    Vec2 { x: 160.0, y: 2.0 },
    Vec2 { x: 150.0, y: 2.0 },
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn selection_is_sound_and_optimal((state, specs) in planning_case(), profile in prop::sample::select(Profile::ALL.to_vec())) {
        let (reference, cfg, risk) = planning_setup();
        let steps = cfg.sampling.steps();
        let preds = PredictionSet { dt: cfg.sampling.dt, steps, agents: agents(&specs, steps, cfg.sampling.dt) };
        let ctx = PlanContext { reference: &reference, lane_half_width: 1.75, goal_region: &GOAL };
        let out = plan(&state, &ctx, &preds, &cfg, &risk, profile);
        let thresholds = profile.thresholds(&cfg.thresholds);

        let mut best = f64::INFINITY;
        for traj in generate_candidates(&state, &reference, &cfg.sampling, cfg.desired_speed, 1.75) {
            if !feasibility_check(&traj, &cfg.limits).0 {
                continue;
            }
            let report = assess_trajectory(&traj, &preds, &risk, &thresholds).unwrap();
            let mut j = base_cost(&traj, &cfg.weights, cfg.desired_speed, &GOAL);
            if profile == Profile::Baseline {
                j += cfg.weights.collision * report.sum_probability;
            }
            if report.valid {
                best = best.min(j);
            }
        }
        if out.fallback {
            prop_assert!(best.is_infinite());
        } else {
            prop_assert!(out.report.valid);
            prop_assert!(out.report.max_risk <= thresholds.r_max && out.report.max_harm <= thresholds.h_max);
            prop_assert!(feasibility_check(&out.trajectory, &cfg.limits).0);
            prop_assert_eq!(out.trajectory.cost, best);
        }
        prop_assert!((out.trajectory.points[0].position - state.position).norm() < 1e-6);
    }

    #[test]
    fn tighter_risk_bound_never_picks_riskier((state, specs) in planning_case(), loose in 0.01..0.5f64, factor in 0.05..1.0f64) {
        let (reference, mut cfg, risk) = planning_setup();
        let steps = cfg.sampling.steps();
        let preds = PredictionSet { dt: cfg.sampling.dt, steps, agents: agents(&specs, steps, cfg.sampling.dt) };
        let ctx = PlanContext { reference: &reference, lane_half_width: 1.75, goal_region: &GOAL };
        cfg.thresholds.r_max = loose;
        let a = plan(&state, &ctx, &preds, &cfg, &risk, Profile::RiskAware);
        cfg.thresholds.r_max = loose * factor;
        let b = plan(&state, &ctx, &preds, &cfg, &risk, Profile::RiskAware);
        if !b.fallback {
            prop_assert!(!a.fallback);
            prop_assert!(b.report.max_risk <= loose * factor);
            prop_assert!(b.report.max_risk <= a.report.max_risk);
        }
    }
}

// ---------------------------------------------------------------- simloop

fn small_config() -> RunConfig {
    RunConfig {
        max_ticks: 40,
        profile: Profile::Aggressive,
        policy: PolicySettings { cell_size: 2.0, ..PolicySettings::default() },
        risk: RiskParams { coeffs: HarmCoeffs { c0: 3.0, c1: 0.45, c_area: 1.0 }, ..RiskParams::default() },
        ..RunConfig::default()
    }
}

fn straight_sim() -> &'static Simulation {
    static SIM: OnceLock<Simulation> = OnceLock::new();
    SIM.get_or_init(|| Simulation::new(straight_road(), small_config(), None).unwrap())
}

fn road_crowd() -> impl Strategy<Value = Vec<Pedestrian>> {
    prop::collection::vec(((8.0..60.0f64, 1.0..18.0f64), (-1.0..1.0f64, -1.0..1.0f64), 0.5..2.0f64, 0usize..8), 0..10)
        .prop_map(|raw| {
            raw.into_iter()
                .enumerate()
                .map(|(i, ((x, y), (vx, vy), v0, goal))| Pedestrian {
                    goal_index: goal,
                    ..ped(i as u32, Vec2::new(x, y), Vec2::new(vx, vy), v0)
                })
                .collect()
        })
}

/// Independent overlap test: distance from the disc center to the box,
/// measured in the box frame.
fn disc_hits_box(center: Vec2, r: f64, pos: Vec2, heading: f64, hl: f64, hw: f64) -> bool {
    let local = (center - pos).rotate(-heading);
    let dx = (local.x.abs() - hl).max(0.0);
    let dy = (local.y.abs() - hw).max(0.0);
    dx.hypot(dy) <= r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn ticks_stay_continuous_and_collisions_match_geometry(peds in road_crowd(), ticks in 5usize..30) {
        let sim = straight_sim();
        let limits = PlannerConfig::default().limits;
        let (hl, hw) = (sim.config.risk.ego_half_length, sim.config.risk.ego_half_width);
        let mut world = sim.initial_state(0);
        world.pedestrians = peds;
        let mut any_overlap = false;
        for _ in 0..ticks {
            if world.collided || world.reached_goal {
                break;
            }
            let out = sim.step(&world);
            let first = out.plan.trajectory.points[0].position;
            prop_assert!((first - world.ego.position).norm() < 1e-6, "plan starts off the executed state");
            let moved = out.world.ego.position.distance(world.ego.position);
            prop_assert!(moved <= limits.v_max * sim.config.dt + 1e-9);
            let overlap = out.world.pedestrians.iter().any(|p| {
                disc_hits_box(p.position, p.radius, out.world.ego.position, out.world.ego.heading, hl, hw)
            });
            any_overlap |= overlap;
            prop_assert_eq!(out.world.collided, any_overlap);
            world = out.world;
        }
    }
}

#[test]
fn traces_replay_byte_identically() {
    let s = straight_road();
    for seed in [1, 7, 2024] {
        let cfg = RunConfig { seed, max_ticks: 15, ..small_config() };
        let a = crowdrisk::simloop::run(&s, &cfg, None).unwrap().0.to_ndjson();
        let b = crowdrisk::simloop::run(&s, &cfg, None).unwrap().0.to_ndjson();
        assert_eq!(a, b);
        let trace = Trace::from_ndjson(&a).unwrap();
        if trace.end.termination == Termination::Collision {
            let last = trace.ticks.last().unwrap();
            let (hl, hw) = (cfg.risk.ego_half_length, cfg.risk.ego_half_width);
            let e = &last.snapshot.ego;
            assert!(last
                .snapshot
                .pedestrians
                .iter()
                .any(|p| disc_hits_box(p.position, p.radius, e.position, e.heading, hl, hw)));
        }
    }
}
