//! Planar geometry shared by every other module: points, arc-length
//! parameterized reference paths, ego-centric frames and oriented boxes.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cross products smaller than this (relative to the two edge lengths) are
/// treated as collinear, so straight polylines get curvature exactly zero.
const COLLINEAR_EPS: f64 = 1e-12;

/// Default maximum distance between consecutive reference-path points.
pub const DEFAULT_MAX_SPACING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    #[inline]
    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product; positive when `o` is to the left of `self`.
    #[inline]
    pub fn cross(self, o: Point2) -> f64 {
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

    #[inline]
    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    /// Left-hand normal (rotated +90 degrees).
    #[inline]
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    #[inline]
    pub fn rotate(self, theta: f64) -> Point2 {
        let (s, c) = theta.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    #[inline]
    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    #[inline]
    pub fn lerp(self, o: Point2, u: f64) -> Point2 {
        Point2::new(self.x + (o.x - self.x) * u, self.y + (o.y - self.y) * u)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(a: [f64; 2]) -> Self {
        Point2::new(a[0], a[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    #[inline]
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Point2 {
    #[inline]
    fn add_assign(&mut self, o: Point2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;
    #[inline]
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    #[inline]
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    #[inline]
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2*pi for tiny negative inputs
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Ego-centric frame: the ego sits at the origin with its heading pointing
/// along +y ("image up") and +x pointing to the ego's right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoFrame {
    pub origin: Point2,
    pub heading: f64,
}

impl EgoFrame {
    pub fn new(origin: Point2, heading: f64) -> Self {
        Self { origin, heading }
    }

    #[inline]
    fn rotation(&self) -> f64 {
        PI / 2.0 - self.heading
    }

    #[inline]
    pub fn vec_to_local(&self, v: Point2) -> Point2 {
        v.rotate(self.rotation())
    }

    #[inline]
    pub fn vec_to_world(&self, v: Point2) -> Point2 {
        v.rotate(-self.rotation())
    }

    #[inline]
    pub fn to_local(&self, p: Point2) -> Point2 {
        self.vec_to_local(p - self.origin)
    }

    #[inline]
    pub fn to_world(&self, p: Point2) -> Point2 {
        self.origin + self.vec_to_world(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc-length coordinate of the foot point.
    pub s: f64,
    /// Signed distance, positive when the query lies left of the path tangent.
    pub lateral_offset: f64,
    pub foot: Point2,
    pub segment: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub pos: Point2,
    pub heading: f64,
    pub curvature: f64,
}

/// Polyline reference path parameterized by arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    id: String,
    points: Vec<Point2>,
    cum_s: Vec<f64>,
    curvature: Vec<f64>,
}

impl ReferencePath {
    /// Builds a path, subdividing any segment longer than `max_spacing`.
    pub fn new(id: impl Into<String>, points: Vec<Point2>, max_spacing: f64) -> Result<Self> {
        let id = id.into();
        if points.len() < 2 {
            return Err(Error::Validation(format!(
                "reference path '{id}' needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::Validation(format!(
                "reference path '{id}' has non-finite point {p:?}"
            )));
        }
        if !(max_spacing > 0.0) {
            return Err(Error::Validation(format!(
                "max spacing must be positive, got {max_spacing}"
            )));
        }
        let mut dense = Vec::with_capacity(points.len());
        dense.push(points[0]);
        for w in points.windows(2) {
            let len = w[0].distance(w[1]);
            if len == 0.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "reference path '{id}' repeats point ({}, {})",
                    w[0].x, w[0].y
                )));
            }
            // slack keeps already-dense input (e.g. a written-out path) untouched
            let pieces = (len / max_spacing - 1e-9).ceil().max(1.0) as usize;
            for k in 1..pieces {
                dense.push(w[0].lerp(w[1], k as f64 / pieces as f64));
            }
            dense.push(w[1]);
        }
        let mut cum_s = Vec::with_capacity(dense.len());
        cum_s.push(0.0);
        for w in dense.windows(2) {
            let next = cum_s.last().unwrap() + w[0].distance(w[1]);
            cum_s.push(next);
        }
        if cum_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::DegenerateGeometry(format!(
                "reference path '{id}' has non-increasing arc length"
            )));
        }
        let curvature = if dense.len() >= 3 {
            estimate_curvature(&dense)?
        } else {
            vec![0.0; dense.len()]
        };
        Ok(Self {
            id,
            points: dense,
            cum_s,
            curvature,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn cum_s(&self) -> &[f64] {
        &self.cum_s
    }

    pub fn curvatures(&self) -> &[f64] {
        &self.curvature
    }

    pub fn length(&self) -> f64 {
        *self.cum_s.last().unwrap()
    }

    pub fn start(&self) -> Point2 {
        self.points[0]
    }

    pub fn end(&self) -> Point2 {
        *self.points.last().unwrap()
    }

    fn segment_dir(&self, i: usize) -> Point2 {
        let d = self.points[i + 1] - self.points[i];
        d * (1.0 / (self.cum_s[i + 1] - self.cum_s[i]))
    }

    /// Closest point on the polyline. Ties go to the smallest arc length.
    pub fn project(&self, p: Point2) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral_offset: 0.0,
            foot: self.points[0],
            segment: 0,
        };
        let mut best_d2 = f64::INFINITY;
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let seg_len = self.cum_s[i + 1] - self.cum_s[i];
            let dir = self.segment_dir(i);
            let along = (p - a).dot(dir).clamp(0.0, seg_len);
            let foot = a + dir * along;
            let d2 = (p - foot).norm_sq();
            if d2 < best_d2 {
                best_d2 = d2;
                best = Projection {
                    s: self.cum_s[i] + along,
                    lateral_offset: 0.0,
                    foot,
                    segment: i,
                };
            }
        }
        let dist = best_d2.sqrt();
        let side = self.segment_dir(best.segment).cross(p - best.foot);
        best.lateral_offset = if side < 0.0 { -dist } else { dist };
        best
    }

    fn segment_at(&self, s: f64) -> usize {
        let last = self.points.len() - 2;
        // first vertex strictly beyond s, minus one
        let i = self.cum_s.partition_point(|&c| c <= s);
        i.saturating_sub(1).min(last)
    }

    /// Position, tangent heading and curvature at arc length `s`.
    pub fn eval(&self, s: f64) -> Result<PathSample> {
        let len = self.length();
        if !(0.0..=len).contains(&s) {
            return Err(Error::OutOfRange {
                what: "arc length",
                value: s,
                lo: 0.0,
                hi: len,
            });
        }
        Ok(self.eval_clamped(s))
    }

    /// Like [`eval`](Self::eval) but clamps `s` into the path.
    pub fn eval_clamped(&self, s: f64) -> PathSample {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let seg_len = self.cum_s[i + 1] - self.cum_s[i];
        let u = ((s - self.cum_s[i]) / seg_len).clamp(0.0, 1.0);
        let dir = self.segment_dir(i);
        PathSample {
            pos: self.points[i].lerp(self.points[i + 1], u),
            heading: dir.angle(),
            curvature: self.curvature[i] + (self.curvature[i + 1] - self.curvature[i]) * u,
        }
    }
}

/// Signed curvature per point from the circumcircle of each consecutive
/// triple. Endpoints copy their neighbour; collinear triples give zero.
pub fn estimate_curvature(points: &[Point2]) -> Result<Vec<f64>> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "curvature needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
        return Err(Error::DegenerateGeometry(format!(
            "duplicate consecutive points at index {i}"
        )));
    }
    let n = points.len();
    let mut kappa = vec![0.0; n];
    for i in 1..n - 1 {
        let (a, b, c) = (points[i - 1], points[i], points[i + 1]);
        let ab = b - a;
        let bc = c - b;
        let ca = a - c;
        let (lab, lbc, lca) = (ab.norm(), bc.norm(), ca.norm());
        let cross = ab.cross(bc);
        if cross.abs() <= COLLINEAR_EPS * lab * lbc {
            continue;
        }
        kappa[i] = 2.0 * cross / (lab * lbc * lca);
    }
    kappa[0] = kappa[1];
    kappa[n - 1] = kappa[n - 2];
    Ok(kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Point2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Point2, heading: f64, length: f64, width: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0) {
            return Err(Error::Validation(format!(
                "box dimensions must be positive, got {length} x {width}"
            )));
        }
        if !center.is_finite() || !heading.is_finite() {
            return Err(Error::Validation("box pose must be finite".into()));
        }
        Ok(Self {
            center,
            heading: wrap_angle(heading),
            length,
            width,
        })
    }

    pub fn inflated(&self, margin: f64) -> Self {
        Self {
            length: self.length + 2.0 * margin,
            width: self.width + 2.0 * margin,
            ..*self
        }
    }

    #[inline]
    fn axes(&self) -> (Point2, Point2) {
        let u = Point2::from_angle(self.heading);
        (u, u.perp())
    }

    pub fn corners(&self) -> [Point2; 4] {
        let (u, v) = self.axes();
        let hl = u * (0.5 * self.length);
        let hw = v * (0.5 * self.width);
        let c = self.center;
        [c + hl + hw, c - hl + hw, c - hl - hw, c + hl - hw]
    }

    /// Half-extent of the box projected on a unit axis.
    #[inline]
    fn radius_on(&self, axis: Point2) -> f64 {
        let (u, v) = self.axes();
        0.5 * self.length * u.dot(axis).abs() + 0.5 * self.width * v.dot(axis).abs()
    }

    pub fn contains(&self, p: Point2) -> bool {
        let (u, v) = self.axes();
        let d = p - self.center;
        d.dot(u).abs() <= 0.5 * self.length && d.dot(v).abs() <= 0.5 * self.width
    }

    /// Bounding circle radius.
    pub fn circumradius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }

    /// True when the segment touches or crosses the box.
    pub fn intersects_segment(&self, a: Point2, b: Point2) -> bool {
        let (u, v) = self.axes();
        let mid = (a + b) * 0.5;
        let half = (b - a) * 0.5;
        let d = mid - self.center;
        if d.dot(u).abs() > 0.5 * self.length + half.dot(u).abs() {
            return false;
        }
        if d.dot(v).abs() > 0.5 * self.width + half.dot(v).abs() {
            return false;
        }
        let len = half.norm();
        if len > 0.0 {
            let n = half.perp() * (1.0 / len);
            if d.dot(n).abs() > self.radius_on(n) {
                return false;
            }
        }
        true
    }
}

/// Separating-axis test over the four face normals. Touching counts as overlap.
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let d = b.center - a.center;
    let reach = a.circumradius() + b.circumradius();
    if d.norm_sq() > reach * reach {
        return false;
    }
    let (au, av) = a.axes();
    let (bu, bv) = b.axes();
    for axis in [au, av, bu, bv] {
        if d.dot(axis).abs() > a.radius_on(axis) + b.radius_on(axis) {
            return false;
        }
    }
    true
}

/// Distance along a ray to the first hit on segment `a`-`b`, if any.
pub fn ray_segment_distance(origin: Point2, dir: Point2, a: Point2, b: Point2) -> Option<f64> {
    let e = b - a;
    let denom = dir.cross(e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let w = a - origin;
    let t = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Whether segments `p1`-`p2` and `q1`-`q2` share a point.
pub fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let r = p2 - p1;
    let s = q2 - q1;
    let denom = r.cross(s);
    let qp = q1 - p1;
    if denom.abs() < 1e-15 {
        if qp.cross(r).abs() > 1e-12 {
            return false;
        }
        // collinear: compare projections on r
        let rr = r.norm_sq();
        if rr == 0.0 {
            return p1 == q1 || p1 == q2;
        }
        let t0 = qp.dot(r) / rr;
        let t1 = (q2 - p1).dot(r) / rr;
        let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        return hi >= 0.0 && lo <= 1.0;
    }
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)
}

/// Closest distance from `p` to segment `a`-`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let d = b - a;
    let len2 = d.norm_sq();
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(d) / len2).clamp(0.0, 1.0);
    p.distance(a + d * t)
}
