use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal};
use serde::{Deserialize, Serialize};

use super::{RegionKind, Scenario};
use crate::geom::{polygon_contains, Polyline, Vec2};
use crate::pedsim::Pedestrian;

pub const MIN_DESIRED_SPEED: f64 = 0.3;
pub const MAX_DESIRED_SPEED: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpawnConfig {
    /// Mean gap between cluster anchors along sidewalk centerlines (m).
    pub mean_cluster_spacing: f64,
    /// Mean pedestrians per cluster; cluster sizes are geometric on `1..`.
    pub mean_cluster_size: f64,
    pub position_stddev: f64,
    pub desired_speed_mean: f64,
    pub desired_speed_stddev: f64,
    pub seed: u64,
    pub radius: f64,
    /// Time over which one step is taken; step width is `step_time * v0`.
    pub step_time: f64,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        Self {
            mean_cluster_spacing: 10.0,
            mean_cluster_size: 2.0,
            position_stddev: 0.5,
            desired_speed_mean: 1.34,
            desired_speed_stddev: 0.26,
            seed: 0,
            radius: 0.25,
            step_time: 0.1,
        }
    }
}

/// Midline of a sidewalk polygon: chord midpoints taken perpendicular to the
/// polygon's principal axis, every `step` meters.
pub fn sidewalk_centerline(polygon: &[Vec2], step: f64) -> Polyline {
    // Sample the boundary uniformly so vertex density does not bias the axis.
    let mut samples = Vec::new();
    let n = polygon.len();
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        let k = ((a.distance(b) / 0.25).ceil() as usize).max(1);
        samples.extend((0..k).map(|j| a.lerp(b, j as f64 / k as f64)));
    }
    let m = samples.len() as f64;
    let mean = samples.iter().fold(Vec2::ZERO, |acc, &p| acc + p) / m;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &samples {
        let d = *p - mean;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let axis_angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let u = Vec2::from_angle(axis_angle);
    let v = u.perp();

    let (lo, hi) = polygon.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let t = (*p - mean).dot(u);
        (lo.min(t), hi.max(t))
    });
    let inset = 1e-6 * (hi - lo).max(1.0);
    let (lo, hi) = (lo + inset, hi - inset);
    let count = (((hi - lo) / step).ceil() as usize).max(1);
    let mut pts = Vec::with_capacity(count + 1);
    for j in 0..=count {
        let t = lo + (hi - lo) * j as f64 / count as f64;
        let origin = mean + u * t;
        if let Some(mid) = chord_midpoint(polygon, origin, v) {
            pts.push(mid);
        }
    }
    if pts.is_empty() {
        pts.push(mean);
    }
    Polyline::new(pts)
}

/// Midpoint of the longest interval where the line `origin + s * dir` lies
/// inside the polygon.
fn chord_midpoint(polygon: &[Vec2], origin: Vec2, dir: Vec2) -> Option<Vec2> {
    let n = polygon.len();
    let mut hits = Vec::new();
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[(i + 1) % n]);
        let e = b - a;
        let denom = dir.cross(e);
        if denom.abs() < 1e-15 {
            continue;
        }
        let w = a - origin;
        let s = w.cross(e) / denom;
        let t = w.cross(dir) / denom;
        if (0.0..1.0).contains(&t) {
            hits.push(s);
        }
    }
    hits.sort_by(f64::total_cmp);
    hits.chunks_exact(2)
        .max_by(|p, q| (p[1] - p[0]).total_cmp(&(q[1] - q[0])))
        .map(|c| origin + dir * (0.5 * (c[0] + c[1])))
}

/// Places pedestrian clusters along every sidewalk. Anchors follow a Poisson
/// process along the concatenated centerlines; members outside their
/// sidewalk are dropped.
pub fn spawn_pedestrians(scenario: &Scenario, cfg: &SpawnConfig) -> Vec<Pedestrian> {
    spawn_with_stats(scenario, cfg).0
}

/// Same as [`spawn_pedestrians`], also returning how many candidate
/// positions were drawn (accepted + rejected).
pub fn spawn_with_stats(scenario: &Scenario, cfg: &SpawnConfig) -> (Vec<Pedestrian>, usize) {
    let sidewalks: Vec<_> = scenario.regions_of(RegionKind::Sidewalk).collect();
    if sidewalks.is_empty() || scenario.goals.is_empty() {
        return (Vec::new(), 0);
    }
    let lines: Vec<Polyline> = sidewalks
        .iter()
        .map(|r| sidewalk_centerline(&r.polygon, 0.5))
        .collect();
    let total: f64 = lines.iter().map(Polyline::length).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gap = Exp::new(1.0 / cfg.mean_cluster_spacing).expect("positive spacing");
    let size = Geometric::new((1.0 / cfg.mean_cluster_size).min(1.0)).expect("cluster size >= 1");
    let jitter = Normal::new(0.0, cfg.position_stddev).expect("finite stddev");
    let speed = Normal::new(cfg.desired_speed_mean, cfg.desired_speed_stddev).expect("finite speed");

    let mut peds = Vec::new();
    let mut drawn = 0;
    let mut x = gap.sample(&mut rng);
    while x < total {
        // Locate the anchor on its sidewalk.
        let mut rem = x;
        let mut which = 0;
        while which + 1 < lines.len() && rem >= lines[which].length() {
            rem -= lines[which].length();
            which += 1;
        }
        let anchor = lines[which].point_at(rem.min(lines[which].length()));
        let polygon = &sidewalks[which].polygon;

        let members = 1 + size.sample(&mut rng);
        for _ in 0..members {
            drawn += 1;
            let p = anchor + Vec2::new(jitter.sample(&mut rng), jitter.sample(&mut rng));
            let v0 = speed
                .sample(&mut rng)
                .clamp(MIN_DESIRED_SPEED, MAX_DESIRED_SPEED);
            if !polygon_contains(polygon, p) {
                continue;
            }
            let goal_index = peds.len() % scenario.goals.len();
            let heading = (scenario.goals[goal_index] - p).normalized();
            peds.push(Pedestrian {
                id: peds.len() as u32,
                position: p,
                velocity: heading * v0,
                desired_speed: v0,
                goal_index,
                step_width: cfg.step_time * v0,
                radius: cfg.radius,
                arrived: false,
            });
        }
        x += gap.sample(&mut rng);
    }
    (peds, drawn)
}
