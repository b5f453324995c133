//! Planar geometry: poses, polyline paths, and the path-relative error frame.
//!
//! Conventions used across the crate:
//! - world frame is metric, x East, y North, headings counter-clockwise from +x;
//! - a positive cross-track error means the query point lies *left* of the
//!   path's direction of travel.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("arc length {s} outside path range [0, {length}]")]
    OutOfRange { s: f64, length: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Wraps an angle into (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    if !a.is_finite() {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Rotated by +90°.
    pub fn perp_left(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn rotate(self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            Self::new(self.x / n, self.y / n)
        } else {
            self
        }
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Self {
        self + (o - self) * t
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl From<(f64, f64)> for Vec2 {
    fn from((x, y): (f64, f64)) -> Self {
        Vec2::new(x, y)
    }
}

/// Planar pose; `heading` is kept in (-π, π].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Maps a body-frame point (forward, left) into the world frame.
    pub fn transform_point(&self, body: Vec2) -> Vec2 {
        self.position() + body.rotate(self.heading)
    }

    /// Maps a world point into this pose's body frame (forward, left).
    pub fn inverse_transform_point(&self, world: Vec2) -> Vec2 {
        (world - self.position()).rotate(-self.heading)
    }
}

/// Tracking-error quantities of a pose relative to a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathFrame {
    pub s: f64,
    pub cross_track: f64,
    pub heading_error: f64,
    pub curvature: f64,
}

/// Ordered polyline with cumulative arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPolyline {
    vertices: Vec<Vec2>,
    cumulative_s: Vec<f64>,
    curvature: Vec<f64>,
}

impl PathPolyline {
    /// Builds a path, rejecting fewer than two vertices or repeated
    /// consecutive vertices.
    pub fn new(vertices: Vec<Vec2>) -> Result<Self, GeometryError> {
        if vertices.len() < 2 {
            return Err(GeometryError::Degenerate(format!(
                "path needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        let mut cumulative_s = Vec::with_capacity(vertices.len());
        cumulative_s.push(0.0);
        for w in vertices.windows(2) {
            let d = w[0].distance(w[1]);
            if !(d > 0.0) {
                return Err(GeometryError::Degenerate(
                    "consecutive vertices must be distinct".into(),
                ));
            }
            let last = *cumulative_s.last().unwrap();
            cumulative_s.push(last + d);
        }
        let curvature = vertex_curvature(&vertices);
        Ok(Self {
            vertices,
            cumulative_s,
            curvature,
        })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn cumulative_s(&self) -> &[f64] {
        &self.cumulative_s
    }

    pub fn length(&self) -> f64 {
        *self.cumulative_s.last().unwrap()
    }

    pub fn start(&self) -> Vec2 {
        self.vertices[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.vertices.last().unwrap()
    }

    fn segment_heading(&self, i: usize) -> f64 {
        (self.vertices[i + 1] - self.vertices[i]).angle()
    }

    /// Index of the segment containing arc length `s` (vertices belong to the
    /// segment they start, the final vertex to the last segment).
    fn segment_at(&self, s: f64) -> usize {
        let n = self.vertices.len() - 1;
        match self
            .cumulative_s
            .binary_search_by(|v| v.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 1),
            Err(i) => i.saturating_sub(1).min(n - 1),
        }
    }

    fn curvature_between(&self, i: usize, t: f64) -> f64 {
        self.curvature[i] * (1.0 - t) + self.curvature[i + 1] * t
    }

    /// Pose and curvature at arc length `s`.
    pub fn sample(&self, s: f64) -> Result<(Pose2D, f64), GeometryError> {
        let length = self.length();
        const EPS: f64 = 1e-9;
        if !(s >= -EPS && s <= length + EPS) {
            return Err(GeometryError::OutOfRange { s, length });
        }
        Ok(self.sample_clamped(s))
    }

    /// Like [`sample`](Self::sample) but clamps `s` into range.
    pub fn sample_clamped(&self, s: f64) -> (Pose2D, f64) {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_at(s);
        let s0 = self.cumulative_s[i];
        let seg_len = self.cumulative_s[i + 1] - s0;
        let t = ((s - s0) / seg_len).clamp(0.0, 1.0);
        let p = self.vertices[i].lerp(self.vertices[i + 1], t);
        (
            Pose2D::new(p.x, p.y, self.segment_heading(i)),
            self.curvature_between(i, t),
        )
    }

    /// Closest point on the path to `point`, expressed as a [`PathFrame`].
    /// Ties are broken toward the smaller arc length.
    pub fn project(&self, point: Vec2, heading: f64) -> PathFrame {
        let mut best_d2 = f64::INFINITY;
        let mut best_i = 0;
        let mut best_t = 0.0;
        for i in 0..self.vertices.len() - 1 {
            let a = self.vertices[i];
            let d = self.vertices[i + 1] - a;
            let len2 = d.dot(d);
            let t = ((point - a).dot(d) / len2).clamp(0.0, 1.0);
            let c = a + d * t;
            let d2 = (point - c).dot(point - c);
            if d2 < best_d2 {
                best_d2 = d2;
                best_i = i;
                best_t = t;
            }
        }
        self.frame_at_segment(point, heading, best_i, best_t)
    }

    /// Projection restricted to a window of arc length around `s_hint`; used
    /// by controllers that track progress and must not jump across a path
    /// that folds back near itself.
    pub fn project_near(&self, point: Vec2, heading: f64, s_hint: f64, window: f64) -> PathFrame {
        let lo = self.segment_at((s_hint - window).max(0.0));
        let hi = self.segment_at((s_hint + window).min(self.length()));
        let mut best_d2 = f64::INFINITY;
        let mut best_i = lo;
        let mut best_t = 0.0;
        for i in lo..=hi {
            let a = self.vertices[i];
            let d = self.vertices[i + 1] - a;
            let t = ((point - a).dot(d) / d.dot(d)).clamp(0.0, 1.0);
            let c = a + d * t;
            let d2 = (point - c).dot(point - c);
            if d2 < best_d2 {
                best_d2 = d2;
                best_i = i;
                best_t = t;
            }
        }
        self.frame_at_segment(point, heading, best_i, best_t)
    }

    fn frame_at_segment(&self, point: Vec2, heading: f64, i: usize, t: f64) -> PathFrame {
        let a = self.vertices[i];
        let b = self.vertices[i + 1];
        let c = a.lerp(b, t);
        let tangent = (b - a).normalized();
        let offset = point - c;
        let side = tangent.cross(offset);
        let beyond_ends = (i == 0 && t <= 0.0) || (i + 2 == self.vertices.len() && t >= 1.0);
        // past either end the path is treated as extended along its end tangent
        let cross_track = if beyond_ends {
            side
        } else if side < 0.0 {
            -offset.norm()
        } else {
            offset.norm()
        };
        let s = self.cumulative_s[i] + t * (self.cumulative_s[i + 1] - self.cumulative_s[i]);
        PathFrame {
            s,
            cross_track,
            heading_error: normalize_angle(heading - tangent.angle()),
            curvature: self.curvature_between(i, t),
        }
    }

    /// Lateral offset of the whole path (positive = left); vertex normals are
    /// averaged from adjacent segments.
    pub fn offset(&self, lateral: f64) -> Result<PathPolyline, GeometryError> {
        let n = self.vertices.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let prev = if i == 0 { 0 } else { i - 1 };
            let next = if i + 1 == n { n - 1 } else { i + 1 };
            let tangent = (self.vertices[next] - self.vertices[prev]).normalized();
            out.push(self.vertices[i] + tangent.perp_left() * lateral);
        }
        out.dedup_by(|a, b| a.distance(*b) < 1e-9);
        PathPolyline::new(out)
    }

    /// Re-samples the path at uniform arc spacing (the final vertex is kept).
    pub fn resample(&self, spacing: f64) -> PathPolyline {
        let length = self.length();
        let n = (length / spacing).ceil().max(1.0) as usize;
        let pts = (0..=n)
            .map(|k| self.sample_clamped(length * k as f64 / n as f64).0.position())
            .collect();
        PathPolyline::new(pts).expect("resampling a valid path stays valid")
    }

    /// Applies a rigid transform: rotate by `theta` about the origin, then
    /// translate.
    pub fn transformed(&self, theta: f64, translation: Vec2) -> PathPolyline {
        let pts = self
            .vertices
            .iter()
            .map(|v| v.rotate(theta) + translation)
            .collect();
        PathPolyline::new(pts).expect("rigid transform preserves validity")
    }

    /// Mirror about the x axis.
    pub fn mirrored(&self) -> PathPolyline {
        let pts = self.vertices.iter().map(|v| Vec2::new(v.x, -v.y)).collect();
        PathPolyline::new(pts).expect("mirroring preserves validity")
    }
}

/// Signed three-point curvature per vertex; endpoints copy their neighbor.
fn vertex_curvature(v: &[Vec2]) -> Vec<f64> {
    let n = v.len();
    let mut k = vec![0.0; n];
    if n < 3 {
        return k;
    }
    for i in 1..n - 1 {
        let a = v[i - 1];
        let b = v[i];
        let c = v[i + 1];
        let ab = a.distance(b);
        let bc = b.distance(c);
        let ca = c.distance(a);
        let denom = ab * bc * ca;
        k[i] = if denom > 0.0 {
            2.0 * (b - a).cross(c - b) / denom
        } else {
            0.0
        };
    }
    k[0] = k[1];
    k[n - 1] = k[n - 2];
    k
}

/// Frame of `point` relative to `path`.
pub fn project_onto_path(path: &PathPolyline, point: Vec2, heading: f64) -> PathFrame {
    path.project(point, heading)
}

/// Pose and curvature at arc length `s`.
pub fn sample_path(path: &PathPolyline, s: f64) -> Result<(Pose2D, f64), GeometryError> {
    path.sample(s)
}

/// Builds a path from (possibly unordered, noisy, duplicated) points.
///
/// Points are chained by nearest neighbour starting from the point farthest
/// from the centroid, exact duplicates are dropped, and a moving average over
/// a window of `smoothing` meters of arc length is applied (`0` disables it).
pub fn fit_path_from_points(points: &[Vec2], smoothing: f64) -> Result<PathPolyline, GeometryError> {
    let mut pts: Vec<Vec2> = Vec::with_capacity(points.len());
    for p in points {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(GeometryError::Degenerate("non-finite point".into()));
        }
        if !pts.iter().any(|q| q.distance(*p) < 1e-9) {
            pts.push(*p);
        }
    }
    if pts.len() < 2 {
        return Err(GeometryError::Degenerate(format!(
            "need at least 2 distinct points, got {}",
            pts.len()
        )));
    }

    let ordered = order_by_chain(pts);
    let smoothed = if smoothing > 0.0 {
        moving_average(&ordered, smoothing)
    } else {
        ordered
    };
    let mut out = smoothed;
    out.dedup_by(|a, b| a.distance(*b) < 1e-9);
    if out.len() < 2 {
        return Err(GeometryError::Degenerate(
            "points collapse after smoothing".into(),
        ));
    }
    PathPolyline::new(out)
}

fn order_by_chain(mut pts: Vec<Vec2>) -> Vec<Vec2> {
    let n = pts.len() as f64;
    let centroid = pts.iter().fold(Vec2::ZERO, |acc, p| acc + *p) * (1.0 / n);
    let start = pts
        .iter()
        .enumerate()
        .max_by(|a, b| {
            a.1.distance(centroid)
                .partial_cmp(&b.1.distance(centroid))
                .unwrap()
                // prefer the earlier index on ties
                .then(b.0.cmp(&a.0))
        })
        .map(|(i, _)| i)
        .unwrap();
    let mut ordered = Vec::with_capacity(pts.len());
    ordered.push(pts.swap_remove(start));
    while !pts.is_empty() {
        let last = *ordered.last().unwrap();
        let (idx, _) = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.distance(last)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        ordered.push(pts.swap_remove(idx));
    }
    ordered
}

fn moving_average(pts: &[Vec2], window: f64) -> Vec<Vec2> {
    let mut s = Vec::with_capacity(pts.len());
    s.push(0.0);
    for w in pts.windows(2) {
        s.push(s.last().unwrap() + w[0].distance(w[1]));
    }
    let total = *s.last().unwrap();
    let half = window / 2.0;
    (0..pts.len())
        .map(|i| {
            // shrink symmetrically near the ends to avoid pulling endpoints inward
            let h = half.min(s[i]).min(total - s[i]);
            let lo = s.partition_point(|&v| v < s[i] - h - 1e-12);
            let hi = s.partition_point(|&v| v <= s[i] + h + 1e-12);
            let sum = pts[lo..hi].iter().fold(Vec2::ZERO, |acc, p| acc + *p);
            sum * (1.0 / (hi - lo) as f64)
        })
        .collect()
}

/// Building blocks for scenario road geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PathPiece {
    Straight { length: f64 },
    /// Positive angle turns left.
    Arc { radius: f64, angle_deg: f64 },
}

/// Densely sampled polyline following a sequence of straight and arc pieces.
pub fn build_path(start: Pose2D, pieces: &[PathPiece], spacing: f64) -> Result<PathPolyline, GeometryError> {
    if !(spacing > 0.0) {
        return Err(GeometryError::Degenerate("spacing must be positive".into()));
    }
    let mut pts = vec![start.position()];
    let mut pos = start.position();
    let mut heading = start.heading;
    for piece in pieces {
        match *piece {
            PathPiece::Straight { length } => {
                if !(length > 0.0) {
                    return Err(GeometryError::Degenerate("straight length must be positive".into()));
                }
                let n = (length / spacing).ceil() as usize;
                let dir = Vec2::from_angle(heading);
                let base = pos;
                for k in 1..=n {
                    pts.push(base + dir * (length * k as f64 / n as f64));
                }
                pos = base + dir * length;
            }
            PathPiece::Arc { radius, angle_deg } => {
                if !(radius > 0.0) || angle_deg == 0.0 {
                    return Err(GeometryError::Degenerate("arc needs radius > 0 and angle != 0".into()));
                }
                let sweep = angle_deg.to_radians();
                let sign = sweep.signum();
                let center = pos + Vec2::from_angle(heading).perp_left() * (radius * sign);
                let arc_len = radius * sweep.abs();
                let n = (arc_len / spacing).ceil() as usize;
                let start_angle = (pos - center).angle();
                for k in 1..=n {
                    let a = start_angle + sweep * k as f64 / n as f64;
                    pts.push(center + Vec2::from_angle(a) * radius);
                }
                heading += sweep;
                pos = *pts.last().unwrap();
            }
        }
    }
    PathPolyline::new(pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(len: f64) -> PathPolyline {
        PathPolyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(len, 0.0)]).unwrap()
    }

    /// Clockwise circle so that the outside is on the left of travel.
    fn cw_circle(r: f64, step_deg: f64) -> PathPolyline {
        let n = (360.0 / step_deg).round() as usize;
        let pts = (0..n)
            .map(|k| {
                let a = -(k as f64) * step_deg.to_radians();
                Vec2::new(r * a.cos(), r * a.sin())
            })
            .collect();
        PathPolyline::new(pts).unwrap()
    }

    #[test]
    fn normalize_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(0.1 + 4.0 * PI) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn path_rejects_degenerate() {
        assert!(PathPolyline::new(vec![Vec2::ZERO]).is_err());
        assert!(PathPolyline::new(vec![Vec2::ZERO, Vec2::ZERO]).is_err());
    }

    #[test]
    fn point_on_straight_path() {
        let f = project_onto_path(&straight(10.0), Vec2::new(3.0, 0.0), 0.0);
        assert_eq!(f.cross_track, 0.0);
        assert_eq!(f.heading_error, 0.0);
        assert_eq!(f.s, 3.0);
    }

    #[test]
    fn perpendicular_offset_left_is_positive() {
        let f = project_onto_path(&straight(10.0), Vec2::new(5.0, 1.0), 0.0);
        assert_eq!(f.s, 5.0);
        assert_eq!(f.cross_track, 1.0);
        assert_eq!(f.heading_error, 0.0);
        let g = project_onto_path(&straight(10.0), Vec2::new(5.0, -1.0), 0.3);
        assert_eq!(g.cross_track, -1.0);
        assert!((g.heading_error - 0.3).abs() < 1e-15);
    }

    #[test]
    fn circle_cross_track_against_analytic_radius() {
        let path = cw_circle(10.0, 1.0);
        for k in 0..12 {
            let a = -(k as f64) * 0.5 - 0.013;
            let p = Vec2::new(11.0 * a.cos(), 11.0 * a.sin());
            let f = path.project(p, 0.0);
            assert!((f.cross_track - 1.0).abs() < 0.01, "{}", f.cross_track);
        }
    }

    #[test]
    fn sample_endpoints_and_midpoint() {
        let p = PathPolyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 2.0), Vec2::new(5.0, 2.0)]).unwrap();
        let (pose, _) = p.sample(0.0).unwrap();
        assert_eq!(pose.position(), Vec2::new(0.0, 0.0));
        assert!((pose.heading - PI / 2.0).abs() < 1e-12);
        let s = straight(100.0);
        let (mid, k) = s.sample(50.0).unwrap();
        assert_eq!(mid.position(), Vec2::new(50.0, 0.0));
        assert_eq!(k, 0.0);
        assert!(matches!(s.sample(100.5), Err(GeometryError::OutOfRange { .. })));
        assert!(s.sample(-0.1).is_err());
    }

    #[test]
    fn circle_curvature_within_five_percent() {
        let path = build_path(Pose2D::new(0.0, 0.0, 0.0), &[PathPiece::Arc { radius: 20.0, angle_deg: 270.0 }], 0.25).unwrap();
        for s in [1.0, 20.0, 55.5, 80.0] {
            let (_, k) = path.sample(s).unwrap();
            assert!((k - 0.05).abs() < 0.05 * 0.05, "{k}");
        }
    }

    #[test]
    fn fit_collinear_is_identity() {
        let pts: Vec<Vec2> = (0..6).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let p = fit_path_from_points(&pts, 2.0).unwrap();
        assert_eq!(p.vertices(), &pts[..]);
    }

    #[test]
    fn fit_removes_duplicate() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        let p = fit_path_from_points(&pts, 0.0).unwrap();
        assert_eq!(p.vertices().len(), 3);
    }

    #[test]
    fn fit_rejects_single_distinct_point() {
        let pts = vec![Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)];
        assert!(matches!(fit_path_from_points(&pts, 0.0), Err(GeometryError::Degenerate(_))));
    }

    #[test]
    fn fit_noisy_circle_within_two_cm_rms() {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = 20.0;
        let n = 1200;
        let pts: Vec<Vec2> = (0..n)
            .map(|k| {
                let a = k as f64 / n as f64 * PI;
                // Box-Muller, sigma 2 cm
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen();
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
                Vec2::new(a.cos(), a.sin()) * (r + 0.02 * g)
            })
            .collect();
        let raw_rms = (pts.iter().map(|p| (p.norm() - r).powi(2)).sum::<f64>() / n as f64).sqrt();
        let fit = fit_path_from_points(&pts, 1.0).unwrap();
        let rms = (fit.vertices().iter().map(|p| (p.norm() - r).powi(2)).sum::<f64>() / fit.vertices().len() as f64).sqrt();
        assert!(rms < 0.02, "rms {rms}");
        assert!(rms < raw_rms);
    }

    #[test]
    fn offset_of_straight_is_parallel() {
        let p = straight(10.0).offset(0.8).unwrap();
        assert!(p.vertices().iter().all(|v| (v.y - 0.8).abs() < 1e-12));
    }

    #[test]
    fn build_path_arc_ends_on_circle() {
        let p = build_path(Pose2D::new(0.0, 0.0, 0.0), &[PathPiece::Straight { length: 10.0 }, PathPiece::Arc { radius: 30.0, angle_deg: 90.0 }], 0.25).unwrap();
        let end = p.end();
        assert!((end.x - 40.0).abs() < 1e-9 && (end.y - 30.0).abs() < 1e-9, "{end:?}");
        assert!((p.length() - (10.0 + 30.0 * PI / 2.0)).abs() < 0.01);
    }
}
