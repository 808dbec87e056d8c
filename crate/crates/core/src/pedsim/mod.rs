//! Social-force pedestrian dynamics.
//!
//! Each pedestrian feels an attractive force along its policy direction,
//! exponential repulsion from other pedestrians (elliptical, stretched along
//! the other pedestrian's step) and from the predicted paths of vehicles.
//! Repulsion from sources behind the pedestrian is damped. States advance
//! with semi-implicit Euler.

mod neighbors;

pub use neighbors::SpatialHash;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Polyline, Vec2};
use crate::policy::{PolicyError, PolicyField};

#[derive(Debug, Error)]
pub enum PedsimError {
    #[error("pedestrian {id} is outside its policy grid")]
    OutOfBounds {
        id: u32,
        #[source]
        source: PolicyError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub id: u32,
    pub position: Vec2,
    pub velocity: Vec2,
    pub desired_speed: f64,
    pub goal_index: usize,
    pub step_width: f64,
    pub radius: f64,
    #[serde(default)]
    pub arrived: bool,
}

impl Pedestrian {
    /// Displacement of one step along the current velocity: the velocity
    /// times the time it takes to cover `step_width` at the desired speed.
    pub fn step_vector(&self) -> Vec2 {
        if self.desired_speed > 0.0 {
            self.velocity * (self.step_width / self.desired_speed)
        } else {
            Vec2::ZERO
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForceParams {
    /// Relaxation time τ (s).
    pub tau: f64,
    /// Pedestrian potential amplitude (m²/s²).
    pub ped_amplitude: f64,
    /// Pedestrian potential range σ_β (m).
    pub ped_range: f64,
    /// Vehicle potential amplitude (m²/s²).
    pub vehicle_amplitude: f64,
    /// Vehicle potential range σ_γ (m).
    pub vehicle_range: f64,
    /// Half field-of-view angle φ (rad).
    pub half_fov: f64,
    /// Weight applied to repulsion from outside the field of view.
    pub fov_scale: f64,
    /// Speed cap as a multiple of each pedestrian's desired speed.
    pub max_speed_factor: f64,
    /// Central finite-difference step for the pedestrian potential (m).
    pub fd_step: f64,
    /// Interactions are dropped beyond this many ranges.
    pub cutoff_ranges: f64,
    /// Pedestrians closer than this to their goal stop (m).
    pub arrival_radius: f64,
}

impl Default for ForceParams {
    fn default() -> Self {
        Self {
            tau: 0.5,
            ped_amplitude: 2.1,
            ped_range: 0.3,
            vehicle_amplitude: 6.0,
            vehicle_range: 1.5,
            half_fov: 100f64.to_radians(),
            fov_scale: 0.5,
            max_speed_factor: 1.3,
            fd_step: 1e-3,
            cutoff_ranges: 10.0,
            arrival_radius: 0.5,
        }
    }
}

/// A vehicle as seen by pedestrians.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleFootprint {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    /// Short-horizon path predictions, each starting at `position`.
    pub predicted_paths: Vec<Polyline>,
}

/// A repulsive force plus whether it came from a singular configuration
/// (coincident positions, pedestrian on a path) that needed a fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Repulsion {
    pub force: Vec2,
    pub singular: bool,
}

fn attraction(ped: &Pedestrian, e: Vec2, params: &ForceParams) -> Vec2 {
    (e * ped.desired_speed - ped.velocity) / params.tau
}

/// Relaxation toward the policy direction at the desired speed.
pub fn attractive_force(
    ped: &Pedestrian,
    field: &PolicyField,
    params: &ForceParams,
) -> Result<Vec2, PedsimError> {
    let e = field
        .desired_direction(ped.position)
        .map_err(|source| PedsimError::OutOfBounds { id: ped.id, source })?;
    Ok(attraction(ped, e, params))
}

/// Semi-minor axis of the ellipse through `r` with foci at the other
/// pedestrian's current and next-step positions.
pub fn ellipse_b(r: Vec2, step: Vec2) -> f64 {
    let s = r.norm() + (r - step).norm();
    0.5 * (s * s + step.norm_sq()).sqrt()
}

/// Repulsion on `a` from `b`, the negative gradient of
/// `A * exp(-b(r) / σ)` with respect to `r = p_a - p_b`, by central
/// differences.
pub fn pedestrian_repulsion(a: &Pedestrian, b: &Pedestrian, params: &ForceParams) -> Repulsion {
    let r = a.position - b.position;
    let cap = 10.0 * params.ped_amplitude / params.ped_range;
    if r.norm() < 1e-9 {
        return Repulsion {
            force: Vec2::X * cap,
            singular: true,
        };
    }
    let step = b.step_vector();
    let potential =
        |r: Vec2| params.ped_amplitude * (-ellipse_b(r, step) / params.ped_range).exp();
    let h = params.fd_step;
    let (hx, hy) = (Vec2::new(h, 0.0), Vec2::new(0.0, h));
    let grad = Vec2::new(
        (potential(r + hx) - potential(r - hx)) / (2.0 * h),
        (potential(r + hy) - potential(r - hy)) / (2.0 * h),
    );
    let mut force = -grad;
    let mag = force.norm();
    if mag > cap {
        force = force * (cap / mag);
    }
    Repulsion {
        force,
        singular: false,
    }
}

/// Closest point to `p` over all polylines.
fn closest_on_paths(paths: &[Polyline], p: Vec2) -> Option<(Vec2, Vec2)> {
    paths
        .iter()
        .map(|pl| {
            let proj = pl.project(p);
            (proj.distance, proj.point, pl.tangent_at(proj.arc))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, q, t)| (q, t))
}

/// Repulsion from the nearest point of a vehicle's predicted paths, the
/// analytic gradient of `A * exp(-d / σ)`. Zero beyond the cutoff.
pub fn vehicle_repulsion(
    ped: &Pedestrian,
    veh: &VehicleFootprint,
    params: &ForceParams,
) -> Repulsion {
    let zero = Repulsion {
        force: Vec2::ZERO,
        singular: false,
    };
    let Some((q, tangent)) = closest_on_paths(&veh.predicted_paths, ped.position) else {
        return zero;
    };
    let away = ped.position - q;
    let d = away.norm();
    let sigma = params.vehicle_range;
    if d > params.cutoff_ranges * sigma {
        return zero;
    }
    let peak = params.vehicle_amplitude / sigma;
    if d < 1e-9 {
        let left = if tangent.norm_sq() > 0.0 {
            tangent.perp()
        } else {
            Vec2::from_angle(veh.heading).perp()
        };
        return Repulsion {
            force: left * peak,
            singular: true,
        };
    }
    Repulsion {
        force: away * (peak * (-d / sigma).exp() / d),
        singular: false,
    }
}

/// Field-of-view weight: full strength when the source (opposite the force)
/// lies within `half_fov` of the walking direction `e`.
pub fn fov_weight(e: Vec2, f: Vec2, params: &ForceParams) -> f64 {
    let n = f.norm();
    if n == 0.0 {
        return 1.0;
    }
    let toward_source = -f / n;
    if e.dot(toward_source) >= params.half_fov.cos() - 1e-12 {
        1.0
    } else {
        params.fov_scale
    }
}

/// Whether `b` is close enough to `a` to be summed.
fn within_cutoff(a: &Pedestrian, b: &Pedestrian, params: &ForceParams) -> bool {
    ellipse_b(a.position - b.position, b.step_vector()) <= params.cutoff_ranges * params.ped_range
}

fn force_with_direction<'a>(
    ped: &Pedestrian,
    e: Vec2,
    others: impl Iterator<Item = &'a Pedestrian>,
    vehicles: &[VehicleFootprint],
    params: &ForceParams,
) -> Vec2 {
    let mut total = attraction(ped, e, params);
    for other in others {
        if other.arrived || !within_cutoff(ped, other, params) {
            continue;
        }
        let f = pedestrian_repulsion(ped, other, params).force;
        total += f * fov_weight(e, f, params);
    }
    for veh in vehicles {
        let f = vehicle_repulsion(ped, veh, params).force;
        total += f * fov_weight(e, f, params);
    }
    total
}

/// Net force on `ped`, summing over `others` in order. Off-grid
/// pedestrians are steered back onto the grid.
pub fn total_force(
    ped: &Pedestrian,
    others: &[Pedestrian],
    vehicles: &[VehicleFootprint],
    field: &PolicyField,
    params: &ForceParams,
) -> Vec2 {
    let e = field.direction_or_inward(ped.position);
    force_with_direction(ped, e, others.iter(), vehicles, params)
}

/// Forces on every pedestrian, using a spatial hash to find neighbors.
/// `fields[i]` is the policy for goal `i`. Arrived pedestrians get zero.
pub fn compute_forces(
    peds: &[Pedestrian],
    vehicles: &[VehicleFootprint],
    fields: &[PolicyField],
    params: &ForceParams,
) -> Vec<Vec2> {
    let max_step = peds
        .iter()
        .filter(|p| !p.arrived)
        .map(|p| p.step_vector().norm())
        .fold(0.0, f64::max);
    let radius = params.cutoff_ranges * params.ped_range + 0.5 * max_step;
    let hash = SpatialHash::new(
        radius.max(1e-3),
        peds.iter()
            .enumerate()
            .filter(|(_, p)| !p.arrived)
            .map(|(i, p)| (i, p.position)),
    );
    peds.par_iter()
        .enumerate()
        .map_init(Vec::new, |buf, (i, ped)| {
            if ped.arrived {
                return Vec2::ZERO;
            }
            hash.query(ped.position, radius, buf);
            let e = fields[ped.goal_index].direction_or_inward(ped.position);
            let others = buf.iter().filter(|&&j| j != i).map(|&j| &peds[j]);
            force_with_direction(ped, e, others, vehicles, params)
        })
        .collect()
}

/// Advances pedestrians by `dt`: velocity first (capped), then position
/// with the new velocity. Pedestrians reaching their goal stop for good.
pub fn step_pedestrians(
    peds: &[Pedestrian],
    vehicles: &[VehicleFootprint],
    fields: &[PolicyField],
    params: &ForceParams,
    dt: f64,
) -> Vec<Pedestrian> {
    let forces = compute_forces(peds, vehicles, fields, params);
    peds.iter()
        .zip(forces)
        .map(|(ped, f)| integrate(ped, f, fields[ped.goal_index].goal, params, dt))
        .collect()
}

fn integrate(ped: &Pedestrian, force: Vec2, goal: Vec2, params: &ForceParams, dt: f64) -> Pedestrian {
    let mut next = ped.clone();
    if ped.arrived {
        return next;
    }
    let mut v = ped.velocity + force * dt;
    let vmax = params.max_speed_factor * ped.desired_speed;
    let speed = v.norm();
    if speed > vmax {
        v = v * (vmax / speed);
    }
    next.velocity = v;
    next.position = ped.position + v * dt;
    if next.position.distance(goal) < params.arrival_radius {
        next.arrived = true;
        next.velocity = Vec2::ZERO;
    }
    next
}
