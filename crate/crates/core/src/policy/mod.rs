//! Offline walking policies: value iteration over a [`CostGrid`] toward a
//! single goal, giving each cell a cost-to-go and a best move.

mod cache;

pub use cache::{decode_policy, encode_policy, CacheStatus, PolicyCache};

use std::f64::consts::TAU;

use thiserror::Error;

use crate::geom::Vec2;
use crate::scenario::{CostGrid, GridHeader};

/// Marker for cells without a best action (goal, blocked or unreachable).
pub const NO_ACTION: u16 = u16::MAX;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("action set needs at least 4 directions, got {0}")]
    TooFewActions(usize),
    #[error("goal ({}, {}) lies outside the grid", .0.x, .0.y)]
    GoalOutOfBounds(Vec2),
    #[error("goal ({}, {}) lies in a non-traversable cell", .0.x, .0.y)]
    GoalBlocked(Vec2),
    #[error("position ({}, {}) lies outside the grid", .0.x, .0.y)]
    OutOfBounds(Vec2),
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("policy cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One move of the action set, in cell units.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub dx: i32,
    pub dy: i32,
    /// Euclidean length in cells.
    pub length: f64,
    /// Cells (relative to the source) whose interior the move passes through,
    /// excluding source and destination.
    pub crossed: Vec<(i32, i32)>,
}

impl Action {
    pub fn direction(&self) -> Vec2 {
        Vec2::new(self.dx as f64, self.dy as f64) / self.length
    }
}

/// The `n` closest grid offsets with pairwise distinct angles.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    actions: Vec<Action>,
}

fn gcd(a: i32, b: i32) -> i32 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn angle_of(dx: i32, dy: i32) -> f64 {
    (dy as f64).atan2(dx as f64).rem_euclid(TAU)
}

/// Cells whose open interior the segment from the origin to `(dx, dy)` crosses.
fn crossed_cells(dx: i32, dy: i32) -> Vec<(i32, i32)> {
    let mut out = Vec::new();
    let (fx, fy) = (dx as f64, dy as f64);
    for cy in dy.min(0)..=dy.max(0) {
        for cx in dx.min(0)..=dx.max(0) {
            if (cx, cy) == (0, 0) || (cx, cy) == (dx, dy) {
                continue;
            }
            // Clip t in [0, 1] against the open square around (cx, cy).
            let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
            for (d, c) in [(fx, cx as f64), (fy, cy as f64)] {
                if d == 0.0 {
                    if (c).abs() >= 0.5 {
                        hi = -1.0;
                    }
                } else {
                    let (t0, t1) = ((c - 0.5) / d, (c + 0.5) / d);
                    lo = lo.max(t0.min(t1));
                    hi = hi.min(t0.max(t1));
                }
            }
            if hi - lo > 1e-12 {
                out.push((cx, cy));
            }
        }
    }
    out
}

impl ActionSet {
    /// Offsets sorted by length then angle, keeping only the shortest offset
    /// for each direction.
    pub fn new(n: usize) -> Result<Self, PolicyError> {
        if n < 4 {
            return Err(PolicyError::TooFewActions(n));
        }
        let mut radius = (n as f64).sqrt().ceil() as i32 + 1;
        loop {
            let mut cand: Vec<(i64, f64, i32, i32)> = Vec::new();
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    if (dx, dy) != (0, 0) && gcd(dx, dy) == 1 {
                        let len2 = (dx as i64).pow(2) + (dy as i64).pow(2);
                        cand.push((len2, angle_of(dx, dy), dx, dy));
                    }
                }
            }
            cand.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            cand.truncate(n);
            // Offsets longer than the radius may have been skipped; widen.
            if cand.len() == n && cand[n - 1].0 <= (radius as i64).pow(2) {
                let actions = cand
                    .into_iter()
                    .map(|(len2, _, dx, dy)| Action {
                        dx,
                        dy,
                        length: (len2 as f64).sqrt(),
                        crossed: crossed_cells(dx, dy),
                    })
                    .collect();
                return Ok(Self { actions });
            }
            radius *= 2;
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn offsets(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        self.actions.iter().map(|a| (a.dx, a.dy))
    }
}

/// Shorthand for [`ActionSet::new`].
pub fn build_action_set(n: usize) -> Result<ActionSet, PolicyError> {
    ActionSet::new(n)
}

/// Converged cost-to-go and greedy moves toward one goal.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub goal: Vec2,
    pub goal_cell: usize,
    pub header: GridHeader,
    pub grid_hash: u64,
    pub tol: f64,
    pub iterations: usize,
    pub converged: bool,
    pub actions: ActionSet,
    pub cost_to_go: Vec<f64>,
    pub best_action: Vec<u16>,
}

/// Outgoing transitions per cell in compressed-row form.
struct TransitionGraph {
    start: Vec<u32>,
    dest: Vec<u32>,
    action: Vec<u16>,
    cost: Vec<f64>,
}

impl TransitionGraph {
    fn build(grid: &CostGrid, actions: &ActionSet) -> Self {
        let (w, h) = (grid.width as i64, grid.height as i64);
        let walkable = |x: i64, y: i64| {
            x >= 0 && y >= 0 && x < w && y < h && grid.is_traversable(grid.index(x as usize, y as usize))
        };
        let mut g = TransitionGraph {
            start: Vec::with_capacity(grid.len() + 1),
            dest: Vec::new(),
            action: Vec::new(),
            cost: Vec::new(),
        };
        for idx in 0..grid.len() {
            g.start.push(g.dest.len() as u32);
            if !grid.is_traversable(idx) {
                continue;
            }
            let (ix, iy) = grid.coords(idx);
            let (ix, iy) = (ix as i64, iy as i64);
            let state_cost = grid.cost(idx);
            for (k, a) in actions.actions().iter().enumerate() {
                let (tx, ty) = (ix + a.dx as i64, iy + a.dy as i64);
                if !walkable(tx, ty) {
                    continue;
                }
                if !a
                    .crossed
                    .iter()
                    .all(|&(cx, cy)| walkable(ix + cx as i64, iy + cy as i64))
                {
                    continue;
                }
                g.dest.push(grid.index(tx as usize, ty as usize) as u32);
                g.action.push(k as u16);
                g.cost.push(a.length * grid.cell_size * state_cost);
            }
        }
        g.start.push(g.dest.len() as u32);
        g
    }

    fn edges(&self, idx: usize) -> std::ops::Range<usize> {
        self.start[idx] as usize..self.start[idx + 1] as usize
    }
}

/// Default stopping tolerance for a grid: `1e-6` times its cheapest state cost.
pub fn default_tolerance(grid: &CostGrid) -> f64 {
    1e-6 * grid.min_cost()
}

pub fn default_max_iter(grid: &CostGrid) -> usize {
    10 * (grid.width + grid.height)
}

/// Gauss-Seidel value iteration with alternating scan directions.
///
/// A move costs its length times the state cost of the source cell. Moves
/// that end in, or pass through, a blocked cell are not allowed.
pub fn value_iteration(
    grid: &CostGrid,
    goal: Vec2,
    actions: &ActionSet,
    tol: f64,
    max_iter: usize,
) -> Result<PolicyField, PolicyError> {
    if !(tol > 0.0) {
        return Err(PolicyError::BadTolerance);
    }
    let (gx, gy) = grid.cell_of(goal).ok_or(PolicyError::GoalOutOfBounds(goal))?;
    let goal_cell = grid.index(gx, gy);
    if !grid.is_traversable(goal_cell) {
        return Err(PolicyError::GoalBlocked(goal));
    }

    let graph = TransitionGraph::build(grid, actions);
    let mut value = vec![f64::INFINITY; grid.len()];
    value[goal_cell] = 0.0;

    let (w, h) = (grid.width, grid.height);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let flip_x = iterations % 2 == 1;
        let flip_y = (iterations / 2) % 2 == 1;
        iterations += 1;
        let mut max_change = 0.0_f64;
        for jy in 0..h {
            let iy = if flip_y { h - 1 - jy } else { jy };
            for jx in 0..w {
                let ix = if flip_x { w - 1 - jx } else { jx };
                let idx = iy * w + ix;
                if idx == goal_cell {
                    continue;
                }
                let mut best = value[idx];
                for e in graph.edges(idx) {
                    let v = graph.cost[e] + value[graph.dest[e] as usize];
                    if v < best {
                        best = v;
                    }
                }
                if best < value[idx] {
                    max_change = max_change.max(value[idx] - best);
                    value[idx] = best;
                }
            }
        }
        if max_change < tol {
            converged = true;
            break;
        }
    }

    let best_action = (0..grid.len())
        .map(|idx| {
            if idx == goal_cell || !value[idx].is_finite() {
                return NO_ACTION;
            }
            let to_goal = goal - grid.cell_center(idx % w, idx / w);
            let mut choice: Option<(f64, f64, u16)> = None;
            for e in graph.edges(idx) {
                let v = graph.cost[e] + value[graph.dest[e] as usize];
                let a = &actions.actions()[graph.action[e] as usize];
                let dev = angle_between(a.direction(), to_goal);
                choice = match choice {
                    None => Some((v, dev, graph.action[e])),
                    Some((bv, bdev, bk)) => {
                        let slack = 1e-12 * bv.abs().max(1.0);
                        if v < bv - slack || ((v - bv).abs() <= slack && dev < bdev) {
                            Some((v, dev, graph.action[e]))
                        } else {
                            Some((bv, bdev, bk))
                        }
                    }
                };
            }
            choice.map_or(NO_ACTION, |c| c.2)
        })
        .collect();

    Ok(PolicyField {
        goal,
        goal_cell,
        header: grid.header(),
        grid_hash: grid.content_hash(),
        tol,
        iterations,
        converged,
        actions: actions.clone(),
        cost_to_go: value,
        best_action,
    })
}

fn angle_between(a: Vec2, b: Vec2) -> f64 {
    if b.norm_sq() == 0.0 {
        return 0.0;
    }
    a.cross(b).atan2(a.dot(b)).abs()
}

impl PolicyField {
    pub fn width(&self) -> usize {
        self.header.width
    }

    pub fn height(&self) -> usize {
        self.header.height
    }

    /// Cell index containing `p`, or `None` outside the grid.
    pub fn cell_of(&self, p: Vec2) -> Option<usize> {
        let h = &self.header;
        let fx = (p.x - h.origin.x) / h.cell_size;
        let fy = (p.y - h.origin.y) / h.cell_size;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= h.width as f64 && fy <= h.height as f64) {
            return None;
        }
        let ix = (fx.floor() as usize).min(h.width - 1);
        let iy = (fy.floor() as usize).min(h.height - 1);
        Some(iy * h.width + ix)
    }

    pub fn cell_center(&self, idx: usize) -> Vec2 {
        let h = &self.header;
        Vec2::new(
            h.origin.x + ((idx % h.width) as f64 + 0.5) * h.cell_size,
            h.origin.y + ((idx / h.width) as f64 + 0.5) * h.cell_size,
        )
    }

    pub fn cost_to_go_at(&self, p: Vec2) -> Result<f64, PolicyError> {
        self.cell_of(p)
            .map(|i| self.cost_to_go[i])
            .ok_or(PolicyError::OutOfBounds(p))
    }

    /// Destination cell of the best move from `idx`.
    pub fn next_cell(&self, idx: usize) -> Option<usize> {
        let k = self.best_action[idx];
        if k == NO_ACTION {
            return None;
        }
        let a = &self.actions.actions()[k as usize];
        let w = self.header.width as i64;
        let (ix, iy) = ((idx as i64) % w, (idx as i64) / w);
        Some(((iy + a.dy as i64) * w + ix + a.dx as i64) as usize)
    }

    /// Unit walking direction at `p`.
    ///
    /// In the goal cell this points straight at the goal (zero when on it).
    /// Cells without a best move steer toward the nearest cell that has a
    /// finite cost-to-go.
    pub fn desired_direction(&self, p: Vec2) -> Result<Vec2, PolicyError> {
        let idx = self.cell_of(p).ok_or(PolicyError::OutOfBounds(p))?;
        if idx == self.goal_cell {
            let d = self.goal - p;
            return Ok(if d.norm() < 1e-12 { Vec2::ZERO } else { d.normalized() });
        }
        let k = self.best_action[idx];
        if k != NO_ACTION {
            return Ok(self.actions.actions()[k as usize].direction());
        }
        Ok(self
            .nearest_reachable(p, idx)
            .map_or(Vec2::ZERO, |c| (self.cell_center(c) - p).normalized()))
    }

    /// Like [`desired_direction`](Self::desired_direction), but off-grid
    /// positions steer back toward the nearest in-grid point.
    pub fn direction_or_inward(&self, p: Vec2) -> Vec2 {
        match self.desired_direction(p) {
            Ok(d) => d,
            Err(_) => {
                let h = &self.header;
                let eps = 1e-9 * h.cell_size;
                let q = Vec2::new(
                    p.x.clamp(h.origin.x + eps, h.origin.x + h.width as f64 * h.cell_size - eps),
                    p.y.clamp(h.origin.y + eps, h.origin.y + h.height as f64 * h.cell_size - eps),
                );
                (q - p).normalized()
            }
        }
    }

    fn nearest_reachable(&self, p: Vec2, from: usize) -> Option<usize> {
        let (w, h) = (self.header.width as i64, self.header.height as i64);
        let (cx, cy) = ((from as i64) % w, (from as i64) / w);
        let mut best: Option<(f64, usize)> = None;
        let max_r = w.max(h);
        for r in 1..=max_r {
            if let Some((d, _)) = best {
                if (r - 1) as f64 * self.header.cell_size > d {
                    break;
                }
            }
            for y in (cy - r)..=(cy + r) {
                for x in (cx - r)..=(cx + r) {
                    let on_ring = (x - cx).abs() == r || (y - cy).abs() == r;
                    if !on_ring || x < 0 || y < 0 || x >= w || y >= h {
                        continue;
                    }
                    let idx = (y * w + x) as usize;
                    if !self.cost_to_go[idx].is_finite() {
                        continue;
                    }
                    let d = self.cell_center(idx).distance(p);
                    if best.is_none_or(|(bd, bi)| d < bd || (d == bd && idx < bi)) {
                        best = Some((d, idx));
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }
}
