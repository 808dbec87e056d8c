use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RegionKind, Scenario, ScenarioError};
use crate::geom::{polygon_contains, Vec2};

/// Per-area walking costs. Roads are the most expensive, sidewalks the cheapest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateCosts {
    pub road: f64,
    pub crosswalk: f64,
    pub sidewalk: f64,
}

impl Default for StateCosts {
    fn default() -> Self {
        Self {
            road: 50.0,
            crosswalk: 20.0,
            sidewalk: 10.0,
        }
    }
}

impl StateCosts {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.road > self.crosswalk && self.crosswalk > self.sidewalk && self.sidewalk > 0.0 {
            Ok(())
        } else {
            Err(ScenarioError::Validation {
                field: "costs".into(),
                message: "state costs must satisfy road > crosswalk > sidewalk > 0".into(),
            })
        }
    }
}

/// Axis-aligned grid of walking costs. Row `iy` covers
/// `origin.y + iy * cell_size ..` and columns run along +x.
#[derive(Debug, Clone, PartialEq)]
pub struct CostGrid {
    pub origin: Vec2,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    cost: Vec<f64>,
    traversable: Vec<bool>,
}

/// Grid metadata written ahead of the cost array on export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub origin: Vec2,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize)]
struct GridExport {
    #[serde(flatten)]
    header: GridHeader,
    /// Row-major; `null` marks a non-traversable cell.
    cost: Vec<Option<f64>>,
}

impl CostGrid {
    /// Builds a grid from explicit per-cell costs; `None` marks a blocked cell.
    pub fn from_costs(
        origin: Vec2,
        cell_size: f64,
        width: usize,
        height: usize,
        costs: &[Option<f64>],
    ) -> Result<Self, ScenarioError> {
        if !(cell_size > 0.0) || width == 0 || height == 0 {
            return Err(ScenarioError::Degenerate("empty grid".into()));
        }
        if costs.len() != width * height {
            return Err(ScenarioError::Degenerate(format!(
                "expected {} costs, got {}",
                width * height,
                costs.len()
            )));
        }
        if costs.iter().flatten().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(ScenarioError::Degenerate(
                "traversable cells need a positive finite cost".into(),
            ));
        }
        Ok(Self {
            origin,
            cell_size,
            width,
            height,
            cost: costs.iter().map(|c| c.unwrap_or(f64::INFINITY)).collect(),
            traversable: costs.iter().map(Option::is_some).collect(),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    /// Cell containing `p`, or `None` outside the grid.
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin.x) / self.cell_size;
        let fy = (p.y - self.origin.y) / self.cell_size;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        // Points on the far boundary belong to the last cell.
        let ix = if ix == self.width && fx <= self.width as f64 { ix - 1 } else { ix };
        let iy = if iy == self.height && fy <= self.height as f64 { iy - 1 } else { iy };
        (ix < self.width && iy < self.height).then_some((ix, iy))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (ix as f64 + 0.5) * self.cell_size,
            self.origin.y + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cost of a cell; infinite when blocked.
    #[inline]
    pub fn cost(&self, idx: usize) -> f64 {
        self.cost[idx]
    }

    #[inline]
    pub fn is_traversable(&self, idx: usize) -> bool {
        self.traversable[idx]
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    pub fn min_cost(&self) -> f64 {
        self.cost
            .iter()
            .zip(&self.traversable)
            .filter(|(_, &t)| t)
            .map(|(&c, _)| c)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            origin: self.origin,
            cell_size: self.cell_size,
            width: self.width,
            height: self.height,
        }
    }

    /// Canonical little-endian byte image: header, then costs with blocked cells as -1.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * self.len());
        out.extend_from_slice(&self.origin.x.to_le_bytes());
        out.extend_from_slice(&self.origin.y.to_le_bytes());
        out.extend_from_slice(&self.cell_size.to_le_bytes());
        out.extend_from_slice(&(self.width as u64).to_le_bytes());
        out.extend_from_slice(&(self.height as u64).to_le_bytes());
        for i in 0..self.len() {
            let c = if self.traversable[i] { self.cost[i] } else { -1.0 };
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Content hash used to key policy caches.
    pub fn content_hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// JSON export: header fields plus a row-major `cost` array.
    pub fn to_json(&self) -> String {
        let export = GridExport {
            header: self.header(),
            cost: (0..self.len())
                .map(|i| self.traversable[i].then_some(self.cost[i]))
                .collect(),
        };
        serde_json::to_string(&export).expect("grid serializes")
    }
}

fn priority(kind: RegionKind) -> u8 {
    match kind {
        RegionKind::Crosswalk => 3,
        RegionKind::Sidewalk => 2,
        RegionKind::Goal => 1,
        RegionKind::Road => 0,
    }
}

/// Rasterizes the scenario's pedestrian-relevant regions by cell-center
/// containment. Overlaps resolve as crosswalk > sidewalk > goal > road; goal
/// areas are charged the sidewalk cost.
pub fn rasterize(
    scenario: &Scenario,
    cell_size: f64,
    costs: &StateCosts,
) -> Result<CostGrid, ScenarioError> {
    costs.validate()?;
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(ScenarioError::Degenerate("cell size must be positive".into()));
    }
    let b = &scenario.bounds;
    if !(b.area() > 0.0) {
        return Err(ScenarioError::Degenerate("zero-area bounds".into()));
    }
    let width = ((b.width() / cell_size) - 1e-9).ceil().max(1.0) as usize;
    let height = ((b.height() / cell_size) - 1e-9).ceil().max(1.0) as usize;

    let mut regions: Vec<_> = scenario.regions.iter().collect();
    regions.sort_by_key(|r| std::cmp::Reverse(priority(r.kind)));

    let mut cells = Vec::with_capacity(width * height);
    for iy in 0..height {
        for ix in 0..width {
            let c = Vec2::new(
                b.min.x + (ix as f64 + 0.5) * cell_size,
                b.min.y + (iy as f64 + 0.5) * cell_size,
            );
            let kind = regions
                .iter()
                .find(|r| polygon_contains(&r.polygon, c))
                .map(|r| r.kind);
            cells.push(kind.map(|k| match k {
                RegionKind::Road => costs.road,
                RegionKind::Crosswalk => costs.crosswalk,
                RegionKind::Sidewalk | RegionKind::Goal => costs.sidewalk,
            }));
        }
    }
    CostGrid::from_costs(b.min, cell_size, width, height, &cells)
}
