//! Oracles and generators shared by the property and acceptance suites.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crowdrisk::geom::Vec2;
use crowdrisk::policy::ActionSet;
use crowdrisk::scenario::CostGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Exact cost-to-go by Dijkstra on the reversed move graph. A move costs its
/// length times the source cell's state cost and may not enter or cross a
/// blocked cell.
pub fn dijkstra(grid: &CostGrid, goal_cell: usize, actions: &ActionSet) -> Vec<f64> {
    let (w, h) = (grid.width as i64, grid.height as i64);
    let open = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && grid.is_traversable(grid.index(x as usize, y as usize));
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); grid.len()];
    for src in 0..grid.len() {
        if !grid.is_traversable(src) {
            continue;
        }
        let (x, y) = grid.coords(src);
        let (x, y) = (x as i64, y as i64);
        for a in actions.actions() {
            let (tx, ty) = (x + a.dx as i64, y + a.dy as i64);
            if !open(tx, ty) || !a.crossed.iter().all(|&(cx, cy)| open(x + cx as i64, y + cy as i64)) {
                continue;
            }
            let dst = grid.index(tx as usize, ty as usize);
            incoming[dst].push((src, a.length * grid.cell_size * grid.cost(src)));
        }
    }
    let mut dist = vec![f64::INFINITY; grid.len()];
    dist[goal_cell] = 0.0;
    let mut heap = BinaryHeap::from([Entry(0.0, goal_cell)]);
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(u, c) in &incoming[v] {
            let nd = d + c;
            if nd < dist[u] {
                dist[u] = nd;
                heap.push(Entry(nd, u));
            }
        }
    }
    dist
}

/// Random grid with roughly `blocked` of its cells non-traversable and
/// costs drawn from `1..20`, plus a traversable goal position.
pub fn random_grid(seed: u64, max_side: usize, blocked: f64) -> (CostGrid, Vec2) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.random_range(2..=max_side);
    let h = rng.random_range(2..=max_side);
    let cell = rng.random_range(0.25..2.0);
    let mut costs: Vec<Option<f64>> = (0..w * h)
        .map(|_| (!rng.random_bool(blocked)).then(|| rng.random_range(1.0..20.0)))
        .collect();
    let goal_cell = rng.random_range(0..w * h);
    costs[goal_cell].get_or_insert(1.0);
    let origin = Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    let grid = CostGrid::from_costs(origin, cell, w, h, &costs).unwrap();
    let goal = grid.cell_center(goal_cell % w, goal_cell / w);
    (grid, goal)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
