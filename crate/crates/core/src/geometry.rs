//! Planar points and convex polygon primitives.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the planar cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn dist2(self, o: Point2) -> f64 {
        let d = self - o;
        d.dot(d)
    }

    pub fn normalized(self) -> Point2 {
        let n = self.norm();
        Point2::new(self.x / n, self.y / n)
    }

    /// Counter-clockwise rotation by a right angle.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn lerp(self, o: Point2, s: f64) -> Point2 {
        self + (o - self) * s
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// Signed shoelace area; positive for counter-clockwise loops.
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..n {
        a += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * a
}

pub fn centroid(poly: &[Point2]) -> Point2 {
    let n = poly.len();
    let a = signed_area(poly);
    if a.abs() <= f64::MIN_POSITIVE {
        let s = poly.iter().fold(Point2::default(), |acc, &p| acc + p);
        return s * (1.0 / n as f64);
    }
    // Shift to the first vertex to limit cancellation.
    let o = poly[0];
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let p = poly[i] - o;
        let q = poly[(i + 1) % n] - o;
        let c = p.cross(q);
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    o + Point2::new(cx, cy) * (1.0 / (6.0 * a))
}

pub fn perimeter(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].dist(poly[(i + 1) % n])).sum()
}

/// Maximal pairwise vertex distance, which is the diameter of a convex polygon.
pub fn diameter(poly: &[Point2]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..poly.len() {
        for j in i + 1..poly.len() {
            d = d.max(poly[i].dist(poly[j]));
        }
    }
    d
}

/// True when the loop is counter-clockwise and every turn is a left turn
/// (collinear vertices allowed up to `tol` relative to edge lengths).
pub fn is_convex_ccw(poly: &[Point2], tol: f64) -> bool {
    let n = poly.len();
    if n < 3 || signed_area(poly) <= 0.0 {
        return false;
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let e1 = b - a;
        let e2 = c - b;
        if e1.cross(e2) < -tol * e1.norm() * e2.norm() {
            return false;
        }
    }
    true
}

/// Distance-signed containment test for a counter-clockwise convex polygon:
/// returns the minimum over edges of the signed distance to the edge line,
/// positive inside.
pub fn convex_inner_distance(poly: &[Point2], p: Point2) -> f64 {
    let n = poly.len();
    let mut m = f64::INFINITY;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let e = b - a;
        let len = e.norm();
        if len == 0.0 {
            continue;
        }
        m = m.min(e.cross(p - a) / len);
    }
    m
}

/// Keeps the part of `poly` where `normal · p <= offset` (one Sutherland–Hodgman pass).
pub fn clip_halfplane(poly: &[Point2], normal: Point2, offset: f64) -> Vec<Point2> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    if n == 0 {
        return out;
    }
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let fp = normal.dot(p) - offset;
        let fq = normal.dot(q) - offset;
        if fp <= 0.0 {
            out.push(p);
        }
        if (fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0) {
            let s = fp / (fp - fq);
            out.push(p.lerp(q, s));
        }
    }
    dedup_loop(out)
}

/// Intersection of two counter-clockwise convex polygons.
pub fn convex_intersection(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.len() < 3 {
            return Vec::new();
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        // Outward normal of a ccw edge is the edge direction rotated clockwise.
        let e = b - a;
        let normal = Point2::new(e.y, -e.x);
        out = clip_halfplane(&out, normal, normal.dot(a));
    }
    if out.len() < 3 {
        Vec::new()
    } else {
        out
    }
}

fn dedup_loop(mut pts: Vec<Point2>) -> Vec<Point2> {
    const EPS: f64 = 1e-14;
    pts.dedup_by(|a, b| a.dist(*b) <= EPS * (1.0 + b.norm()));
    while pts.len() > 1 {
        let first = pts[0];
        let last = *pts.last().unwrap();
        if first.dist(last) <= EPS * (1.0 + first.norm()) {
            pts.pop();
        } else {
            break;
        }
    }
    pts
}
