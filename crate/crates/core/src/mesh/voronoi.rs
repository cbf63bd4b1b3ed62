use std::collections::HashMap;

use super::{Cell, Domain, Face, Mesh};
use crate::error::{invalid, Result};
use crate::geometry::{self, Point2};

/// Origin of a polygon edge during clipping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Boundary(usize),
    Seed(usize),
}

type Loop = Vec<(Point2, Tag)>;

/// Sutherland–Hodgman pass that keeps `normal · p <= offset` and records
/// which constraint produced each outgoing edge.
fn clip_tagged(poly: &Loop, normal: Point2, offset: f64, tag: Tag) -> Loop {
    let n = poly.len();
    let mut out: Loop = Vec::with_capacity(n + 1);
    for i in 0..n {
        let (p, pe) = poly[i];
        let q = poly[(i + 1) % n].0;
        let fp = normal.dot(p) - offset;
        let fq = normal.dot(q) - offset;
        if fp <= 0.0 {
            let label = if fp == 0.0 && fq > 0.0 { tag } else { pe };
            out.push((p, label));
            if fp < 0.0 && fq > 0.0 {
                out.push((p.lerp(q, fp / (fp - fq)), tag));
            }
        } else if fq < 0.0 {
            out.push((p.lerp(q, fp / (fp - fq)), pe));
        }
    }
    // Drop the first vertex of coincident pairs; the surviving vertex keeps
    // the label of the edge that continues.
    let scale = out
        .iter()
        .map(|(p, _)| p.norm())
        .fold(1.0, f64::max);
    let eps = 1e-14 * scale;
    let mut cleaned: Loop = Vec::with_capacity(out.len());
    let m = out.len();
    for i in 0..m {
        let next = out[(i + 1) % m].0;
        if m > 1 && out[i].0.dist(next) <= eps {
            continue;
        }
        cleaned.push(out[i]);
    }
    cleaned
}

/// Voronoi tessellation of `domain` generated by `seeds`, with `x_K` at the seed.
///
/// Each cell is the domain clipped successively by the bisector half-planes of
/// nearer seeds; the bisector normal is `(s_j - s_i)/|s_j - s_i|`, so the
/// orthogonality clause holds to rounding.
pub fn build_voronoi_mesh(seeds: &[Point2], domain: &Domain) -> Result<Mesh> {
    if seeds.is_empty() {
        return invalid("no seeds");
    }
    let diam = domain.diameter();
    for (i, s) in seeds.iter().enumerate() {
        if !s.is_finite() {
            return invalid(format!("seed {i} is not finite"));
        }
        if domain.inner_distance(*s) <= 1e-12 * diam {
            return invalid(format!("seed {i} at {s:?} is not strictly inside the domain"));
        }
    }
    let n = seeds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        seeds[a]
            .x
            .total_cmp(&seeds[b].x)
            .then(seeds[a].y.total_cmp(&seeds[b].y))
    });
    for w in order.windows(2) {
        if seeds[w[0]].dist(seeds[w[1]]) <= 1e-12 * diam {
            return invalid(format!("seeds {} and {} coincide", w[0], w[1]));
        }
    }

    let base: Loop = domain
        .vertices()
        .iter()
        .enumerate()
        .map(|(e, &p)| (p, Tag::Boundary(e)))
        .collect();

    let mut loops: Vec<Loop> = Vec::with_capacity(n);
    let mut others: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let si = seeds[i];
        others.clear();
        others.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (seeds[j].dist(si), j)),
        );
        others.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut poly = base.clone();
        let mut radius = poly.iter().map(|(p, _)| p.dist(si)).fold(0.0, f64::max);
        for &(d, j) in &others {
            if d > 2.0 * radius {
                break;
            }
            let normal = seeds[j] - si;
            let mid = si.lerp(seeds[j], 0.5);
            poly = clip_tagged(&poly, normal, normal.dot(mid), Tag::Seed(j));
            if poly.len() < 3 {
                break;
            }
            radius = poly.iter().map(|(p, _)| p.dist(si)).fold(0.0, f64::max);
        }
        let pts: Vec<Point2> = poly.iter().map(|(p, _)| *p).collect();
        let area = geometry::signed_area(&pts);
        if pts.len() < 3 || area <= 1e-14 * diam * diam {
            return invalid(format!("Voronoi cell of seed {i} degenerates to zero area"));
        }
        loops.push(poly);
    }

    let mut cells: Vec<Cell> = loops
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let pts: Vec<Point2> = l.iter().map(|(p, _)| *p).collect();
            Cell {
                id: i,
                center: seeds[i],
                volume: geometry::signed_area(&pts),
                vertices: pts,
                faces: Vec::new(),
            }
        })
        .collect();

    // Collect shared edges from both sides before creating faces.
    let mut shared: HashMap<(usize, usize), Vec<(usize, Point2, Point2)>> = HashMap::new();
    let mut faces: Vec<Face> = Vec::new();
    let edge_eps = 1e-12 * diam;
    for (i, l) in loops.iter().enumerate() {
        let m = l.len();
        for e in 0..m {
            let (a, tag) = l[e];
            let b = l[(e + 1) % m].0;
            if a.dist(b) <= edge_eps {
                continue;
            }
            match tag {
                Tag::Seed(j) => shared
                    .entry((i.min(j), i.max(j)))
                    .or_default()
                    .push((i, a, b)),
                Tag::Boundary(_) => {
                    let t = b - a;
                    let normal = Point2::new(t.y, -t.x).normalized();
                    let d = normal.dot(a - seeds[i]);
                    let id = faces.len();
                    faces.push(Face {
                        id,
                        inner: i,
                        outer: None,
                        area: a.dist(b),
                        d_kl: d,
                        normal,
                        endpoints: Some([a, b]),
                    });
                    cells[i].faces.push(id);
                }
            }
        }
    }
    let mut pairs: Vec<_> = shared.into_iter().collect();
    pairs.sort_by_key(|(k, _)| *k);
    for ((k, l), sides) in pairs {
        let area = sides.iter().map(|(_, a, b)| a.dist(*b)).sum::<f64>() / sides.len() as f64;
        let (_, a, b) = sides
            .iter()
            .find(|(c, _, _)| *c == k)
            .copied()
            .unwrap_or(sides[0]);
        let e = seeds[l] - seeds[k];
        let id = faces.len();
        faces.push(Face {
            id,
            inner: k,
            outer: Some(l),
            area,
            d_kl: e.norm(),
            normal: e.normalized(),
            endpoints: Some([a, b]),
        });
        cells[k].faces.push(id);
        cells[l].faces.push(id);
    }
    Ok(Mesh::from_parts(Some(domain.clone()), cells, faces, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{mesh_size, validate_admissibility, Tolerances};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_seeds_split_along_bisector() {
        let seeds = [Point2::new(0.25, 0.5), Point2::new(0.75, 0.5)];
        let m = build_voronoi_mesh(&seeds, &Domain::unit_square()).unwrap();
        let f: Vec<_> = m.interior_faces().collect();
        assert_eq!(f.len(), 1);
        assert!((f[0].d_kl - 0.5).abs() < 1e-15);
        assert!((f[0].normal - Point2::new(1.0, 0.0)).norm() < 1e-15);
        assert!((f[0].area - 1.0).abs() < 1e-14);
        let [a, b] = f[0].endpoints.unwrap();
        assert!((a.x - 0.5).abs() < 1e-15 && (b.x - 0.5).abs() < 1e-15);
    }

    #[test]
    fn symmetric_seeds_give_congruent_cells() {
        let seeds = [
            Point2::new(0.25, 0.25),
            Point2::new(0.75, 0.25),
            Point2::new(0.75, 0.75),
            Point2::new(0.25, 0.75),
        ];
        let m = build_voronoi_mesh(&seeds, &Domain::unit_square()).unwrap();
        for c in m.cells() {
            assert!((c.volume - 0.25).abs() < 1e-15);
        }
        assert_eq!(m.interior_faces().count(), 4);
    }

    #[test]
    fn random_seeds_are_admissible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let seeds: Vec<Point2> = (0..16)
            .map(|_| Point2::new(rng.random_range(0.02..0.98), rng.random_range(0.02..0.98)))
            .collect();
        let m = build_voronoi_mesh(&seeds, &Domain::unit_square()).unwrap();
        let r = validate_admissibility(&m, &Tolerances::default());
        assert!((r.volume_sum - 1.0).abs() < 1e-10);
        assert!(r.max_orth_deviation < 1e-10);
        assert_eq!(r.tiling, Some(true), "{r:?}");
        assert!(r.antisymmetry);
        assert_eq!(r.convexity, Some(true));
    }

    #[test]
    fn cell_diameter_is_pairwise_vertex_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seeds: Vec<Point2> = (0..30)
            .map(|_| Point2::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)))
            .collect();
        let m = build_voronoi_mesh(&seeds, &Domain::unit_square()).unwrap();
        // Brute force over points on the boundary of each cell, which reaches the
        // diameter of a convex set.
        let mut brute: f64 = 0.0;
        for c in m.cells() {
            let v = &c.vertices;
            let mut samples = Vec::new();
            for i in 0..v.len() {
                for s in 0..=8 {
                    samples.push(v[i].lerp(v[(i + 1) % v.len()], s as f64 / 8.0));
                }
            }
            for a in &samples {
                for b in &samples {
                    brute = brute.max(a.dist(*b));
                }
            }
        }
        assert!((mesh_size(&m).unwrap() - brute).abs() < 1e-14);
    }

    #[test]
    fn polygon_domain() {
        let hex: Vec<Point2> = (0..6)
            .map(|i| {
                let a = std::f64::consts::PI / 3.0 * i as f64;
                Point2::new(a.cos(), a.sin())
            })
            .collect();
        let d = Domain::convex_polygon(hex).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seeds = Vec::new();
        while seeds.len() < 40 {
            let p = Point2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if d.inner_distance(p) > 0.01 {
                seeds.push(p);
            }
        }
        let m = build_voronoi_mesh(&seeds, &d).unwrap();
        let r = validate_admissibility(&m, &Tolerances::default());
        assert!((r.volume_sum - d.area()).abs() < 1e-10 * d.area());
        assert!(r.orthogonality && r.tiling == Some(true), "{r:?}");
    }

    #[test]
    fn rejects_bad_seeds() {
        let d = Domain::unit_square();
        let dup = [Point2::new(0.3, 0.3), Point2::new(0.3, 0.3)];
        assert!(build_voronoi_mesh(&dup, &d).is_err());
        let edge = [Point2::new(0.0, 0.3), Point2::new(0.5, 0.5)];
        assert!(build_voronoi_mesh(&edge, &d).is_err());
    }
}
