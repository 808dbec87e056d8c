//! World model: drivable lanes, pedestrian areas, goals and actors.
//!
//! Scenarios are stored as JSON documents with the top-level keys `bounds`,
//! `regions`, `lanes`, `goals`, `ego` and `obstacles`. Points are `[x, y]`
//! arrays in meters, headings in radians, speeds in m/s, masses in kg.

mod raster;
mod spawn;

pub use raster::{rasterize, CostGrid, GridHeader, StateCosts};
pub use spawn::{sidewalk_centerline, spawn_pedestrians, spawn_with_stats, SpawnConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{polygon_contains, polygon_is_simple, signed_area2, Polyline, Vec2};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
    #[error("degenerate scenario: {0}")]
    Degenerate(String),
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Road,
    Sidewalk,
    Crosswalk,
    Goal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub kind: RegionKind,
    /// Simple polygon, counter-clockwise.
    pub polygon: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: String,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    /// Lanes that continue from the end of this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub successors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoSpec {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    /// Reference lane the planner samples along.
    pub lane: String,
    pub goal_region: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub id: String,
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub mass: f64,
    #[serde(default = "default_vehicle_length")]
    pub length: f64,
    #[serde(default = "default_vehicle_width")]
    pub width: f64,
}

fn default_vehicle_length() -> f64 {
    4.5
}

fn default_vehicle_width() -> f64 {
    1.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub bounds: Bounds,
    pub regions: Vec<Region>,
    pub lanes: Vec<Lane>,
    pub goals: Vec<Vec2>,
    pub ego: EgoSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
}

impl Scenario {
    pub fn regions_of(&self, kind: RegionKind) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(move |r| r.kind == kind)
    }

    pub fn lane(&self, id: &str) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    pub fn lane_polyline(&self, id: &str) -> Option<Polyline> {
        self.lane(id).map(|l| Polyline::new(l.centerline.clone()))
    }

    /// Checks every structural invariant; `load_scenario` calls this.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let b = &self.bounds;
        if !(b.min.is_finite() && b.max.is_finite()) || b.min.x > b.max.x || b.min.y > b.max.y {
            return Err(ScenarioError::invalid("bounds", "min must not exceed max"));
        }
        for (i, r) in self.regions.iter().enumerate() {
            let field = format!("regions[{i}] ({})", r.id);
            validate_polygon(&field, &r.polygon)?;
        }
        for (i, l) in self.lanes.iter().enumerate() {
            let field = format!("lanes[{i}] ({})", l.id);
            if l.centerline.len() < 2 {
                return Err(ScenarioError::invalid(field, "lane polyline needs at least 2 points"));
            }
            if l.centerline.iter().any(|p| !p.is_finite()) {
                return Err(ScenarioError::invalid(field, "non-finite coordinate"));
            }
            if !(l.width > 0.0 && l.width.is_finite()) {
                return Err(ScenarioError::invalid(field, "lane width must be positive"));
            }
            for s in &l.successors {
                if self.lane(s).is_none() {
                    return Err(ScenarioError::invalid(field, format!("unknown successor lane `{s}`")));
                }
            }
        }
        for (i, g) in self.goals.iter().enumerate() {
            let field = format!("goals[{i}]");
            if !g.is_finite() {
                return Err(ScenarioError::invalid(field, "non-finite coordinate"));
            }
            if !self
                .regions_of(RegionKind::Sidewalk)
                .any(|r| polygon_contains(&r.polygon, *g))
            {
                return Err(ScenarioError::invalid(field, "goal not inside any sidewalk"));
            }
        }
        let ego = &self.ego;
        if !ego.position.is_finite() || !ego.heading.is_finite() || !ego.speed.is_finite() {
            return Err(ScenarioError::invalid("ego", "non-finite state"));
        }
        if ego.speed < 0.0 {
            return Err(ScenarioError::invalid("ego.speed", "speed must be nonnegative"));
        }
        if !b.contains(ego.position) {
            return Err(ScenarioError::invalid("ego.position", "ego start outside bounds"));
        }
        if self.lane(&ego.lane).is_none() {
            return Err(ScenarioError::invalid("ego.lane", format!("unknown lane `{}`", ego.lane)));
        }
        validate_polygon("ego.goal_region", &ego.goal_region)?;
        for (i, o) in self.obstacles.iter().enumerate() {
            let field = format!("obstacles[{i}] ({})", o.id);
            if !o.position.is_finite() || !o.heading.is_finite() {
                return Err(ScenarioError::invalid(field, "non-finite state"));
            }
            if !(o.speed >= 0.0) {
                return Err(ScenarioError::invalid(field, "speed must be nonnegative"));
            }
            if !(o.mass > 0.0) {
                return Err(ScenarioError::invalid(field, "mass must be positive"));
            }
            if !(o.length > 0.0 && o.width > 0.0) {
                return Err(ScenarioError::invalid(field, "footprint must be positive"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

fn validate_polygon(field: &str, poly: &[Vec2]) -> Result<(), ScenarioError> {
    if poly.len() < 3 {
        return Err(ScenarioError::invalid(field, "polygon needs at least 3 vertices"));
    }
    if poly.iter().any(|p| !p.is_finite()) {
        return Err(ScenarioError::invalid(field, "non-finite coordinate"));
    }
    if !polygon_is_simple(poly) {
        return Err(ScenarioError::invalid(field, "polygon not simple"));
    }
    if signed_area2(poly) <= 0.0 {
        return Err(ScenarioError::invalid(field, "polygon not counter-clockwise"));
    }
    Ok(())
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}
