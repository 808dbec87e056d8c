//! Planar geometry shared by every module: vectors, polygons, polylines and
//! oriented boxes. All lengths are meters.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Serialized as a two-element `[x, y]` array.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };
    pub const X: Vec2 = Vec2 { x: 1.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `angle` radians from the +x axis.
    #[inline]
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c, s)
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Unit vector, or zero for a (near) zero input.
    #[inline]
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 1e-15 {
            self / n
        } else {
            Vec2::ZERO
        }
    }

    /// Counter-clockwise perpendicular.
    #[inline]
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    #[inline]
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    #[inline]
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    #[inline]
    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Vec2::new(x, y)
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    #[inline]
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    #[inline]
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    #[inline]
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    #[inline]
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    #[inline]
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    #[inline]
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Twice the signed area; positive for counter-clockwise vertex order.
pub fn signed_area2(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| poly[i].cross(poly[(i + 1) % n]))
        .sum()
}

pub fn polygon_area(poly: &[Vec2]) -> f64 {
    signed_area2(poly).abs() * 0.5
}

/// Even-odd point containment. Points exactly on an edge may land on either side.
pub fn polygon_contains(poly: &[Vec2], p: Vec2) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, including collinear overlap.
pub fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when no two non-adjacent edges touch and no vertex repeats.
pub fn polygon_is_simple(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if poly[i] == poly[(i + 1) % n] {
            return false;
        }
    }
    for i in 0..n {
        let (a1, a2) = (poly[i], poly[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

/// Closest point to `p` on segment `[a, b]` and its parameter in `[0, 1]`.
pub fn closest_point_on_segment(a: Vec2, b: Vec2, p: Vec2) -> (Vec2, f64) {
    let ab = b - a;
    let len2 = ab.norm_sq();
    if len2 <= 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (a + ab * t, t)
}

/// Euclidean distance from `p` to the polygon (zero inside).
pub fn distance_to_polygon(poly: &[Vec2], p: Vec2) -> f64 {
    if polygon_contains(poly, p) {
        return 0.0;
    }
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (q, _) = closest_point_on_segment(poly[i], poly[(i + 1) % n], p);
            q.distance(p)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    pub point: Vec2,
    /// Index of the segment holding `point`.
    pub segment: usize,
    /// Arc length from the polyline start to `point`.
    pub arc: f64,
    pub distance: f64,
}

/// A polyline with precomputed cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Consecutive duplicate points are dropped. Needs at least one point.
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(!points.is_empty(), "polyline needs at least one point");
        let mut pts: Vec<Vec2> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|&q: &Vec2| q.distance(p) > 1e-12) {
                pts.push(p);
            }
        }
        let mut cumulative = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in pts.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        Self {
            points: pts,
            cumulative,
        }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        if self.points.len() < 2 {
            return 0;
        }
        let idx = self.cumulative.partition_point(|&c| c <= s);
        idx.clamp(1, self.points.len() - 1) - 1
    }

    /// Point at arc length `s`; extrapolates linearly beyond either end.
    pub fn point_at(&self, s: f64) -> Vec2 {
        if self.points.len() < 2 {
            return self.points[0];
        }
        let i = self.segment_at(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg_len = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / seg_len;
        a + (b - a) * t
    }

    /// Unit tangent at arc length `s` (the +x axis for a single point).
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        if self.points.len() < 2 {
            return Vec2::X;
        }
        let i = self.segment_at(s);
        (self.points[i + 1] - self.points[i]).normalized()
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        self.tangent_at(s).angle()
    }

    pub fn project(&self, p: Vec2) -> PolylineProjection {
        if self.points.len() < 2 {
            return PolylineProjection {
                point: self.points[0],
                segment: 0,
                arc: 0.0,
                distance: self.points[0].distance(p),
            };
        }
        let mut best = PolylineProjection {
            point: self.points[0],
            segment: 0,
            arc: 0.0,
            distance: f64::INFINITY,
        };
        for i in 0..self.points.len() - 1 {
            let (q, t) = closest_point_on_segment(self.points[i], self.points[i + 1], p);
            let d = q.distance(p);
            if d < best.distance {
                let seg_len = self.cumulative[i + 1] - self.cumulative[i];
                best = PolylineProjection {
                    point: q,
                    segment: i,
                    arc: self.cumulative[i] + t * seg_len,
                    distance: d,
                };
            }
        }
        best
    }

    /// Signed lateral offset of `p` (positive to the left of travel direction).
    pub fn lateral_offset(&self, p: Vec2) -> (f64, f64) {
        let proj = self.project(p);
        let tangent = self.tangent_at(proj.arc);
        let side = tangent.cross(p - proj.point);
        (proj.arc, side.signum() * proj.distance)
    }

    /// Point at `(s, d)` in the curvilinear frame of this polyline.
    pub fn frenet_to_cartesian(&self, s: f64, d: f64) -> Vec2 {
        self.point_at(s) + self.tangent_at(s).perp() * d
    }
}

/// Rectangle centered at `center`, long axis along `heading`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn axes(&self) -> (Vec2, Vec2) {
        let u = Vec2::from_angle(self.heading);
        (u, u.perp())
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Vec2; 4] {
        let (u, v) = self.axes();
        let (l, w) = (u * self.half_length, v * self.half_width);
        [
            self.center + l - w,
            self.center + l + w,
            self.center - l + w,
            self.center - l - w,
        ]
    }

    /// `p` expressed in box coordinates.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.center).rotate(-self.heading)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.half_length && q.y.abs() <= self.half_width
    }

    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        let q = self.to_local(p);
        let dx = (q.x.abs() - self.half_length).max(0.0);
        let dy = (q.y.abs() - self.half_width).max(0.0);
        dx.hypot(dy)
    }

    pub fn overlaps_disc(&self, c: Vec2, r: f64) -> bool {
        self.distance_to_point(c) < r
    }

    /// Separating-axis test; touching boxes do not overlap.
    pub fn overlaps_box(&self, other: &OrientedBox) -> bool {
        let (a0, a1) = self.axes();
        let (b0, b1) = other.axes();
        let ca = self.corners();
        let cb = other.corners();
        for axis in [a0, a1, b0, b1] {
            let (amin, amax) = project_extent(&ca, axis);
            let (bmin, bmax) = project_extent(&cb, axis);
            if amax <= bmin || bmax <= amin {
                return false;
            }
        }
        true
    }
}

fn project_extent(pts: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.dot(axis);
        (lo.min(d), hi.max(d))
    })
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}
