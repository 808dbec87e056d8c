//! Static SVG snapshots and speed plots from recorded traces.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::geom::{OrientedBox, Vec2};
use crate::prediction::Cov2;
use crate::scenario::RegionKind;
use crate::simloop::{Snapshot, Trace};

/// Sigma multiples drawn around each predicted mean.
pub const SIGMA_LEVELS: [f64; 3] = [0.2, 1.0, 3.0];

const PX_PER_M: f64 = 10.0;
const MARGIN: f64 = 10.0;

/// Semi-axes and rotation (radians) of the `k`-sigma level set of `cov`.
pub fn ellipse_axes(cov: &Cov2, k: f64) -> (f64, f64, f64) {
    let (l1, l2, dir) = cov.eigen();
    (k * l1.max(0.0).sqrt(), k * l2.max(0.0).sqrt(), dir.angle())
}

fn fill(kind: RegionKind) -> &'static str {
    match kind {
        RegionKind::Road => "#9a9a9a",
        RegionKind::Sidewalk => "#d9d4c7",
        RegionKind::Crosswalk => "#f2f2f2",
        RegionKind::Goal => "#cfe8cf",
    }
}

fn points_attr(points: &[Vec2]) -> String {
    points
        .iter()
        .map(|p| format!("{:.3},{:.3}", p.x, p.y))
        .collect::<Vec<_>>()
        .join(" ")
}

struct Canvas {
    out: String,
}

impl Canvas {
    fn new(min: Vec2, max: Vec2) -> Self {
        let (w, h) = (max.x - min.x, max.y - min.y);
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}">"#,
            w * PX_PER_M + 2.0 * MARGIN,
            h * PX_PER_M + 2.0 * MARGIN,
            w * PX_PER_M + 2.0 * MARGIN,
            h * PX_PER_M + 2.0 * MARGIN,
        );
        // World y points up; flip once for the whole scene.
        let _ = writeln!(
            out,
            r#"<g transform="matrix({s} 0 0 {ns} {tx:.3} {ty:.3})">"#,
            s = PX_PER_M,
            ns = -PX_PER_M,
            tx = MARGIN - min.x * PX_PER_M,
            ty = MARGIN + max.y * PX_PER_M,
        );
        Self { out }
    }

    fn line(&mut self, s: String) {
        self.out.push_str(&s);
        self.out.push('\n');
    }

    fn finish(mut self) -> String {
        self.out.push_str("</g>\n</svg>\n");
        self.out
    }
}

fn draw_box(c: &mut Canvas, b: &OrientedBox, class: &str, color: &str) {
    c.line(format!(
        r#"<polygon class="{class}" points="{}" fill="{color}" stroke="black" stroke-width="0.05"/>"#,
        points_attr(&b.corners())
    ));
}

fn draw_snapshot(c: &mut Canvas, snap: &Snapshot, half_length: f64, half_width: f64) {
    for o in &snap.obstacles {
        let b = OrientedBox {
            center: o.position,
            heading: o.heading,
            half_length: 0.5 * o.length,
            half_width: 0.5 * o.width,
        };
        draw_box(c, &b, "obstacle", "#5577aa");
    }
    for p in &snap.pedestrians {
        let color = if p.arrived { "#bbbbbb" } else { "#d04030" };
        c.line(format!(
            r#"<circle class="pedestrian" cx="{:.3}" cy="{:.3}" r="{:.3}" fill="{color}"/>"#,
            p.position.x, p.position.y, p.radius
        ));
    }
    let ego = OrientedBox {
        center: snap.ego.position,
        heading: snap.ego.heading,
        half_length,
        half_width,
    };
    draw_box(c, &ego, "ego", "#2a7f3f");
}

/// SVG of the scene at `tick` (0 is the initial state), with pedestrian
/// trails up to that tick, the executed plan, and predicted uncertainty
/// ellipses. Returns `None` if the trace has no such tick.
pub fn render_tick(trace: &Trace, tick: usize) -> Option<String> {
    let snap = trace.snapshot(tick)?;
    let scenario = &trace.header.scenario;
    let risk = &trace.header.config.risk;
    let mut c = Canvas::new(scenario.bounds.min, scenario.bounds.max);

    for r in &scenario.regions {
        c.line(format!(
            r#"<polygon class="region {}" points="{}" fill="{}"/>"#,
            match r.kind {
                RegionKind::Road => "road",
                RegionKind::Sidewalk => "sidewalk",
                RegionKind::Crosswalk => "crosswalk",
                RegionKind::Goal => "goal",
            },
            points_attr(&r.polygon),
            fill(r.kind)
        ));
    }
    for l in &scenario.lanes {
        c.line(format!(
            r#"<polyline class="lane" points="{}" fill="none" stroke="white" stroke-width="0.08" stroke-dasharray="1 1"/>"#,
            points_attr(&l.centerline)
        ));
    }

    let mut trails: BTreeMap<u32, Vec<Vec2>> = BTreeMap::new();
    let mut ego_trail = Vec::new();
    for k in 0..=tick {
        let s = trace.snapshot(k)?;
        ego_trail.push(s.ego.position);
        for p in &s.pedestrians {
            trails.entry(p.id).or_default().push(p.position);
        }
    }
    for pts in trails.values().filter(|p| p.len() > 1) {
        c.line(format!(
            r##"<polyline class="trail" points="{}" fill="none" stroke="#d04030" stroke-opacity="0.4" stroke-width="0.05"/>"##,
            points_attr(pts)
        ));
    }
    if ego_trail.len() > 1 {
        c.line(format!(
            r##"<polyline class="ego-trail" points="{}" fill="none" stroke="#2a7f3f" stroke-width="0.1"/>"##,
            points_attr(&ego_trail)
        ));
    }

    if let Some(rec) = tick.checked_sub(1).and_then(|i| trace.ticks.get(i)) {
        for pred in &rec.predictions {
            for st in &pred.states {
                for (i, &k) in SIGMA_LEVELS.iter().enumerate() {
                    let (rx, ry, angle) = ellipse_axes(&st.cov, k);
                    c.line(format!(
                        r##"<ellipse class="uncertainty s{i}" cx="{:.4}" cy="{:.4}" rx="{:.4}" ry="{:.4}" transform="rotate({:.4} {:.4} {:.4})" fill="none" stroke="#7040a0" stroke-opacity="{:.2}" stroke-width="0.03"/>"##,
                        st.mean.x,
                        st.mean.y,
                        rx,
                        ry,
                        angle.to_degrees(),
                        st.mean.x,
                        st.mean.y,
                        1.0 - 0.3 * i as f64,
                    ));
                }
            }
        }
        if rec.plan.path.len() > 1 {
            c.line(format!(
                r#"<polyline class="plan" points="{}" fill="none" stroke="{}" stroke-width="0.1"/>"#,
                points_attr(&rec.plan.path),
                if rec.plan.fallback { "#e08000" } else { "#30a050" }
            ));
        }
    }

    draw_snapshot(&mut c, snap, risk.ego_half_length, risk.ego_half_width);
    Some(c.finish())
}

/// Ego speed over time as an SVG line chart.
pub fn render_speed_plot(trace: &Trace) -> String {
    let mut series = vec![(0.0, trace.header.initial.ego.speed)];
    series.extend(trace.ticks.iter().map(|t| (t.t, t.snapshot.ego.speed)));
    let t_max = series.last().map_or(1.0, |s| s.0).max(trace.header.dt);
    let v_max = series.iter().map(|s| s.1).fold(1.0, f64::max) * 1.1;
    let (w, h) = (600.0, 300.0);
    let pad = 40.0;
    let to_px = |t: f64, v: f64| Vec2::new(pad + t / t_max * (w - 2.0 * pad), h - pad - v / v_max * (h - 2.0 * pad));
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let o = to_px(0.0, 0.0);
    let x1 = to_px(t_max, 0.0);
    let y1 = to_px(0.0, v_max);
    let _ = writeln!(
        out,
        r#"<polyline class="axes" points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="none" stroke="black"/>"#,
        y1.x, y1.y, o.x, o.y, x1.x, x1.y
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12">t [s] (max {t_max:.1})</text>"#,
        x1.x - 100.0,
        x1.y + 25.0
    );
    let _ = writeln!(
        out,
        r#"<text x="5" y="{:.2}" font-size="12">v [m/s] (max {v_max:.2})</text>"#,
        y1.y - 10.0
    );
    let pts: Vec<Vec2> = series.iter().map(|&(t, v)| to_px(t, v)).collect();
    let _ = writeln!(
        out,
        r##"<polyline class="speed" points="{}" fill="none" stroke="#2a7f3f" stroke-width="2"/>"##,
        pts.iter().map(|p| format!("{:.2},{:.2}", p.x, p.y)).collect::<Vec<_>>().join(" ")
    );
    out.push_str("</svg>\n");
    out
}
