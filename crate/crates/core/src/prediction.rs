//! Constant-velocity Gaussian forecasts for pedestrians and vehicles, and
//! lane-following path predictions for vehicles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{Polyline, Vec2};
use crate::pedsim::Pedestrian;
use crate::scenario::Lane;

/// Symmetric 2x2 covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Cov2 {
    pub const ZERO: Cov2 = Cov2 { xx: 0.0, yy: 0.0, xy: 0.0 };

    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Self { xx, yy, xy }
    }

    pub fn isotropic(var: f64) -> Self {
        Self::new(var, var, 0.0)
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.xx >= -tol && self.yy >= -tol && self.det() >= -tol
    }

    /// `R Σ Rᵀ` for a counter-clockwise rotation by `angle`.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            xx: c * c * self.xx - 2.0 * c * s * self.xy + s * s * self.yy,
            yy: s * s * self.xx + 2.0 * c * s * self.xy + c * c * self.yy,
            xy: c * s * (self.xx - self.yy) + (c * c - s * s) * self.xy,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.xx * k, self.yy * k, self.xy * k)
    }

    pub fn add(&self, o: &Cov2) -> Self {
        Self::new(self.xx + o.xx, self.yy + o.yy, self.xy + o.xy)
    }

    /// Eigenvalues (descending) and the unit eigenvector of the larger one.
    pub fn eigen(&self) -> (f64, f64, Vec2) {
        let m = 0.5 * (self.xx + self.yy);
        let r = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        let angle = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        (m + r, m - r, Vec2::from_angle(angle))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub t: f64,
    pub mean: Vec2,
    pub cov: Cov2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Pedestrian,
    Vehicle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPrediction {
    pub id: u32,
    pub kind: AgentKind,
    pub mass: f64,
    pub states: Vec<GaussianState>,
    /// Expected velocity at each state.
    pub velocities: Vec<Vec2>,
}

/// Predictions for every agent on a shared timestep grid `k * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub dt: f64,
    pub steps: usize,
    pub agents: Vec<AgentPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionParams {
    /// Initial positional variance per axis (m²).
    pub initial_variance: f64,
    /// Pedestrian variance growth per axis (m²/s).
    pub pedestrian_noise: f64,
    /// Vehicle variance growth along its heading (m²/s).
    pub vehicle_noise_longitudinal: f64,
    /// Vehicle variance growth across its heading (m²/s).
    pub vehicle_noise_lateral: f64,
    /// Horizon of the path predictions handed to pedestrians (s).
    pub path_horizon: f64,
    /// Spacing of path prediction samples (m).
    pub path_spacing: f64,
    pub pedestrian_mass: f64,
}

impl Default for PredictionParams {
    fn default() -> Self {
        Self {
            initial_variance: 0.05 * 0.05,
            pedestrian_noise: 0.15,
            vehicle_noise_longitudinal: 0.5,
            vehicle_noise_lateral: 0.05,
            path_horizon: 2.0,
            path_spacing: 0.2,
            pedestrian_mass: 75.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
}

fn step_count(horizon: f64, dt: f64) -> usize {
    (horizon / dt).round() as usize
}

/// `μ(t) = p + v t`, `Σ(t) = Σ₀ + t Q` for `t = k dt`, `k = 0..=horizon/dt`.
pub fn predict_pedestrian(
    ped: &Pedestrian,
    horizon: f64,
    dt: f64,
    sigma0: Cov2,
    q: Cov2,
) -> Vec<GaussianState> {
    (0..=step_count(horizon, dt))
        .map(|k| {
            let t = k as f64 * dt;
            GaussianState {
                t,
                mean: ped.position + ped.velocity * t,
                cov: sigma0.add(&q.scaled(t)),
            }
        })
        .collect()
}

/// Path predictions for a vehicle plus the lane it was matched to.
#[derive(Debug, Clone, PartialEq)]
pub struct VehiclePaths {
    pub paths: Vec<Polyline>,
    pub lane: Option<String>,
}

impl VehiclePaths {
    pub fn unmatched(&self) -> bool {
        self.lane.is_none()
    }
}

/// The lane whose centerline is closest to the vehicle, among lanes it is
/// inside of and roughly aligned with.
pub fn match_lane<'a>(veh: &VehicleState, lanes: &'a [Lane]) -> Option<(&'a Lane, f64, f64)> {
    lanes
        .iter()
        .filter_map(|lane| {
            let line = Polyline::new(lane.centerline.clone());
            let proj = line.project(veh.position);
            let (_, d) = line.lateral_offset(veh.position);
            let along = line.heading_at(proj.arc);
            let aligned = (crate::geom::wrap_angle(veh.heading - along)).abs() < std::f64::consts::FRAC_PI_3;
            (proj.distance <= 0.5 * lane.width + 1e-9 && aligned).then_some((lane, proj.arc, d, proj.distance))
        })
        .min_by(|a, b| a.3.total_cmp(&b.3))
        .map(|(lane, s, d, _)| (lane, s, d))
}

/// One polyline of length `speed * horizon` per reachable lane branch, each
/// starting at the vehicle position and keeping its lateral offset.
/// Vehicles matching no lane get a single straight-ahead path.
pub fn predict_vehicle_paths(
    veh: &VehicleState,
    lanes: &[Lane],
    horizon: f64,
    spacing: f64,
) -> VehiclePaths {
    let reach = veh.speed.max(0.0) * horizon;
    let Some((lane, s0, d0)) = match_lane(veh, lanes) else {
        let dir = Vec2::from_angle(veh.heading);
        let n = (reach / spacing).ceil() as usize;
        let mut pts = vec![veh.position];
        pts.extend((1..=n).map(|j| veh.position + dir * (reach * j as f64 / n as f64)));
        return VehiclePaths {
            paths: vec![Polyline::new(pts)],
            lane: None,
        };
    };
    let mut paths = Vec::new();
    follow(lanes, lane, s0, d0, reach, spacing, vec![veh.position], &mut paths);
    VehiclePaths {
        paths,
        lane: Some(lane.id.clone()),
    }
}

#[allow(clippy::too_many_arguments)]
fn follow(
    lanes: &[Lane],
    lane: &Lane,
    s_start: f64,
    d: f64,
    remaining: f64,
    spacing: f64,
    mut pts: Vec<Vec2>,
    out: &mut Vec<Polyline>,
) {
    let line = Polyline::new(lane.centerline.clone());
    let available = line.length() - s_start;
    let successors: Vec<&Lane> = lane
        .successors
        .iter()
        .filter_map(|id| lanes.iter().find(|l| &l.id == id))
        .collect();
    let here = if successors.is_empty() || remaining <= available {
        remaining
    } else {
        available.max(0.0)
    };
    let n = (here / spacing).ceil() as usize;
    pts.extend((1..=n).map(|j| line.frenet_to_cartesian(s_start + here * j as f64 / n as f64, d)));
    if here >= remaining {
        out.push(Polyline::new(pts));
        return;
    }
    for next in successors {
        follow(lanes, next, 0.0, d, remaining - here, spacing, pts.clone(), out);
    }
}

/// Gaussian forecast moving at constant speed along the first predicted
/// path. Variance grows faster along the direction of travel.
pub fn predict_vehicle_gaussian(
    veh: &VehicleState,
    lanes: &[Lane],
    horizon: f64,
    dt: f64,
    params: &PredictionParams,
) -> (Vec<GaussianState>, Vec<Vec2>) {
    let path = predict_vehicle_paths(veh, lanes, horizon, params.path_spacing)
        .paths
        .swap_remove(0);
    let sigma0 = Cov2::isotropic(params.initial_variance);
    let growth = Cov2::new(params.vehicle_noise_longitudinal, params.vehicle_noise_lateral, 0.0);
    (0..=step_count(horizon, dt))
        .map(|k| {
            let t = k as f64 * dt;
            let s = veh.speed * t;
            let heading = if path.length() > 0.0 {
                path.heading_at(s.min(path.length()))
            } else {
                veh.heading
            };
            let mean = if s <= path.length() {
                path.point_at(s)
            } else {
                path.end() + Vec2::from_angle(heading) * (s - path.length())
            };
            let state = GaussianState {
                t,
                mean,
                cov: sigma0.add(&growth.rotated(heading).scaled(t)),
            };
            (state, Vec2::from_angle(heading) * veh.speed)
        })
        .unzip()
}

/// Obstacle input to [`predict_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleAgent {
    pub id: u32,
    pub state: VehicleState,
    pub mass: f64,
}

/// Forecasts for every pedestrian that has not arrived and every vehicle.
pub fn predict_all(
    peds: &[Pedestrian],
    vehicles: &[VehicleAgent],
    lanes: &[Lane],
    horizon: f64,
    dt: f64,
    params: &PredictionParams,
) -> PredictionSet {
    let sigma0 = Cov2::isotropic(params.initial_variance);
    let q = Cov2::isotropic(params.pedestrian_noise);
    let mut agents: Vec<AgentPrediction> = peds
        .par_iter()
        .filter(|p| !p.arrived)
        .map(|p| {
            let states = predict_pedestrian(p, horizon, dt, sigma0, q);
            AgentPrediction {
                id: p.id,
                kind: AgentKind::Pedestrian,
                mass: params.pedestrian_mass,
                velocities: vec![p.velocity; states.len()],
                states,
            }
        })
        .collect();
    agents.extend(vehicles.iter().map(|v| {
        let (states, velocities) = predict_vehicle_gaussian(&v.state, lanes, horizon, dt, params);
        AgentPrediction {
            id: v.id,
            kind: AgentKind::Vehicle,
            mass: v.mass,
            states,
            velocities,
        }
    }));
    PredictionSet {
        dt,
        steps: step_count(horizon, dt),
        agents,
    }
}
