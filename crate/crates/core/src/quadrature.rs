//! Gauss–Legendre rules on intervals, segments and triangles.

use crate::geometry::Point2;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev initial guess, then Newton on P_n.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            } else {
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x[0] = 0.0;
            w[0] = 2.0;
            break;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Rule on `[a, b]` as `(nodes, weights)`; weights sum to `b - a`.
pub fn interval_rule(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| (mid + half * xi, half * wi))
        .collect()
}

/// Collapsed Gauss rule on a triangle, exact for polynomials of degree `2n - 1`.
/// Weights sum to the triangle area.
pub fn triangle_rule(n: usize, a: Point2, b: Point2, c: Point2) -> Vec<(Point2, f64)> {
    let area = 0.5 * (b - a).cross(c - a).abs();
    let us = interval_rule(n + 1, 0.0, 1.0);
    let vs = interval_rule(n, 0.0, 1.0);
    let mut out = Vec::with_capacity(us.len() * vs.len());
    for &(u, wu) in &us {
        for &(v, wv) in &vs {
            // Jacobian of (u, v) ↦ p is 2·area·u.
            let p = a + (b - a) * (u * (1.0 - v)) + (c - a) * (u * v);
            out.push((p, 2.0 * area * u * wu * wv));
        }
    }
    out
}

/// Fan triangulation from the vertex centroid, with a triangle rule on each piece.
pub fn polygon_rule(n: usize, poly: &[Point2]) -> Vec<(Point2, f64)> {
    let m = poly.len();
    let center = poly.iter().fold(Point2::default(), |s, &p| s + p) * (1.0 / m as f64);
    let mut out = Vec::new();
    for i in 0..m {
        out.extend(triangle_rule(n, center, poly[i], poly[(i + 1) % m]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        for n in 1..=12 {
            let rule = interval_rule(n, 0.0, 2.0);
            for deg in 0..2 * n {
                let q: f64 = rule.iter().map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = 2f64.powi(deg as i32 + 1) / (deg as f64 + 1.0);
                assert!((q - exact).abs() < 1e-12 * exact, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn triangle_rule_degree() {
        let (a, b, c) = (Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0));
        // ∫_T x^i y^j = i! j! / (i + j + 2)!
        let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
        for n in 1..=5 {
            let rule = triangle_rule(n, a, b, c);
            for i in 0..2 * n as u32 {
                for j in 0..(2 * n as u32 - i) {
                    let q: f64 = rule
                        .iter()
                        .map(|(p, w)| w * p.x.powi(i as i32) * p.y.powi(j as i32))
                        .sum();
                    let exact = fact(i) * fact(j) / fact(i + j + 2);
                    assert!((q - exact).abs() < 1e-13, "n={n} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn polygon_rule_area() {
        let sq = [
            Point2::new(0.0, 0.0),
            Point2::new(2.0, 0.0),
            Point2::new(2.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        let w: f64 = polygon_rule(1, &sq).iter().map(|(_, w)| w).sum();
        assert!((w - 2.0).abs() < 1e-14);
    }
}
