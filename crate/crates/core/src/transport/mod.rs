//! Logarithmic Kantorovich-Rubinstein distance
//!
//! ```text
//! D_δ(μ, ν) = inf_π ∫∫ log(|x - y|/δ + 1) dπ(x, y)
//! ```
//!
//! between discrete measures of equal mass, solved exactly as a
//! transportation problem.

mod dense_simplex;
mod knn;
mod network_simplex;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::CellField;
use crate::error::{invalid, Error, Result};
use crate::geometry::{self, Point2};
use crate::mesh::Mesh;

pub use network_simplex::{solve_transport, Solution};

/// Relative mass mismatch tolerated between the two measures.
pub const TOL_MASS: f64 = 1e-9;
/// Largest support accepted by [`brute_force_kr`].
pub const BRUTE_FORCE_CAP: usize = 8;
/// Candidate arcs per atom before column generation.
const NEIGHBOURS: usize = 8;

/// `log(|x - y|/δ + 1)`.
pub fn log_cost(x: Point2, y: Point2, delta: f64) -> f64 {
    (x.dist(y) / delta).ln_1p()
}

/// Weighted point cloud. Weights may be signed before reduction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Point2>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return invalid("points and weights differ in length");
        }
        if points.iter().any(|p| !p.is_finite()) || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NumericInput("measure has non-finite entries".into()));
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Same measure translated by `v`.
    pub fn translated(&self, v: Point2) -> Self {
        Self {
            points: self.points.iter().map(|&p| p + v).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Positive and negative parts of `self - other` after merging atoms at
    /// identical coordinates.
    pub fn signed_difference(&self, other: &Self) -> (Self, Self) {
        let mut acc: HashMap<(u64, u64), (Point2, f64)> = HashMap::new();
        let mut order = Vec::new();
        for (sign, m) in [(1.0, self), (-1.0, other)] {
            for (p, w) in m.points.iter().zip(&m.weights) {
                let key = (p.x.to_bits(), p.y.to_bits());
                let e = acc.entry(key).or_insert_with(|| {
                    order.push(key);
                    (*p, 0.0)
                });
                e.1 += sign * w;
            }
        }
        let mut pos = Self::default();
        let mut neg = Self::default();
        for key in order {
            let (p, w) = acc[&key];
            if w > 0.0 {
                pos.points.push(p);
                pos.weights.push(w);
            } else if w < 0.0 {
                neg.points.push(p);
                neg.weights.push(-w);
            }
        }
        (pos, neg)
    }
}

/// Atomizes a cell field: `points_per_cell` of 1 puts one atom at the cell
/// centroid; 4 and 9 split the cell along a 2×2 or 3×3 sub-grid of its
/// bounding box and put an atom at the centroid of each piece.
pub fn measure_from_cellfield(mesh: &Mesh, field: &CellField, points_per_cell: usize) -> Result<DiscreteMeasure> {
    let s = match points_per_cell {
        1 => 1,
        4 => 2,
        9 => 3,
        other => return invalid(format!("points per cell must be 1, 4 or 9, got {other}")),
    };
    field.check_len(mesh)?;
    let mut points = Vec::with_capacity(mesh.n_cells() * points_per_cell);
    let mut weights = Vec::with_capacity(points.capacity());
    for (c, &v) in mesh.cells().iter().zip(&field.values) {
        if c.vertices.len() < 3 {
            if s > 1 {
                return invalid("sub-cell atoms need cell geometry");
            }
            points.push(c.center);
            weights.push(v * c.volume);
            continue;
        }
        if s == 1 {
            points.push(geometry::centroid(&c.vertices));
            weights.push(v * c.volume);
            continue;
        }
        let lo = c.vertices.iter().fold(Point2::new(f64::INFINITY, f64::INFINITY), |a, p| {
            Point2::new(a.x.min(p.x), a.y.min(p.y))
        });
        let hi = c.vertices.iter().fold(Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, p| {
            Point2::new(a.x.max(p.x), a.y.max(p.y))
        });
        let (dx, dy) = ((hi.x - lo.x) / s as f64, (hi.y - lo.y) / s as f64);
        let poly_area = geometry::signed_area(&c.vertices);
        for j in 0..s {
            for i in 0..s {
                let x0 = lo.x + i as f64 * dx;
                let y0 = lo.y + j as f64 * dy;
                let piece = geometry::convex_intersection(
                    &c.vertices,
                    &[
                        Point2::new(x0, y0),
                        Point2::new(x0 + dx, y0),
                        Point2::new(x0 + dx, y0 + dy),
                        Point2::new(x0, y0 + dy),
                    ],
                );
                if piece.len() < 3 {
                    continue;
                }
                let area = geometry::signed_area(&piece);
                if area <= 0.0 {
                    continue;
                }
                points.push(geometry::centroid(&piece));
                // Pieces share the cell mass by area so the total stays θ_K |K|.
                weights.push(v * c.volume * area / poly_area);
            }
        }
    }
    DiscreteMeasure::new(points, weights)
}

/// Sparse optimal plan.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransportPlan {
    pub entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    /// Largest deviation of the plan marginals from the given weights.
    pub fn marginal_residual(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        for &(i, j, w) in &self.entries {
            ra[i] -= w;
            rb[j] -= w;
        }
        ra.iter().chain(&rb).fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrResult {
    pub distance: f64,
    pub delta: f64,
    pub plan: TransportPlan,
    /// Dual potential at the first measure's atoms.
    pub potential_a: Vec<f64>,
    /// Dual potential at the second measure's atoms.
    pub potential_b: Vec<f64>,
    /// Primal minus dual objective of the returned potential.
    pub gap: f64,
    pub atoms_a: usize,
    pub atoms_b: usize,
    /// The measures actually transported (after any signed reduction).
    #[serde(skip)]
    pub source: DiscreteMeasure,
    #[serde(skip)]
    pub target: DiscreteMeasure,
}

fn check_masses(ma: f64, mb: f64) -> Result<()> {
    if (ma - mb).abs() > TOL_MASS * ma.abs().max(mb.abs()) {
        return Err(Error::UnequalMass { mass_a: ma, mass_b: mb });
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return invalid(format!("delta must be positive, got {delta}"));
    }
    Ok(())
}

/// Integer weights on a common quantum, exactly balanced.
fn quantize(a: &[f64], b: &[f64]) -> (f64, Vec<i64>, Vec<i64>) {
    let total = a.iter().sum::<f64>().max(b.iter().sum::<f64>());
    let quantum = total / 2f64.powi(52);
    let q = |w: &[f64]| -> Vec<i64> { w.iter().map(|x| (x / quantum).round() as i64).collect() };
    let (mut qa, mut qb) = (q(a), q(b));
    let diff: i64 = qa.iter().sum::<i64>() - qb.iter().sum::<i64>();
    // Put the rounding surplus on the heaviest atom of the lighter side.
    let fix = |v: &mut Vec<i64>, d: i64| {
        let k = (0..v.len()).max_by_key(|&k| v[k]).unwrap();
        v[k] += d;
    };
    if diff > 0 {
        fix(&mut qb, diff);
    } else if diff < 0 {
        fix(&mut qa, -diff);
    }
    (quantum, qa, qb)
}

/// Atoms on a regular lattice `lo + (i, j) ⊙ (dx, dy)`, whose pairwise costs
/// depend only on index offsets and are tabulated once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub lo: Point2,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
}

struct Coster {
    delta: f64,
    table: Option<(Vec<f64>, usize, Vec<(u32, u32)>, Vec<(u32, u32)>)>,
}

impl Coster {
    fn new(a: &[Point2], b: &[Point2], delta: f64, lattice: Option<Lattice>) -> Self {
        let table = lattice.and_then(|l| {
            let index = |p: &Point2| -> Option<(u32, u32)> {
                let fi = (p.x - l.lo.x) / l.dx;
                let fj = (p.y - l.lo.y) / l.dy;
                let (i, j) = (fi.round(), fj.round());
                let ok = (fi - i).abs() <= 1e-9 && (fj - j).abs() <= 1e-9;
                (ok && i >= 0.0 && j >= 0.0 && (i as usize) < l.nx && (j as usize) < l.ny)
                    .then_some((i as u32, j as u32))
            };
            let ia: Option<Vec<_>> = a.iter().map(index).collect();
            let ib: Option<Vec<_>> = b.iter().map(index).collect();
            let values = (0..l.nx)
                .flat_map(|di| (0..l.ny).map(move |dj| (di, dj)))
                .map(|(di, dj)| (Point2::new(di as f64 * l.dx, dj as f64 * l.dy).norm() / delta).ln_1p())
                .collect();
            Some((values, l.ny, ia?, ib?))
        });
        Self { delta, table }
    }

    /// Cost between atom `i` of the first and atom `j` of the second cloud.
    #[inline]
    fn ab(&self, a: &[Point2], b: &[Point2], i: usize, j: usize) -> f64 {
        match &self.table {
            Some((v, ny, ia, ib)) => {
                let (p, q) = (ia[i], ib[j]);
                v[p.0.abs_diff(q.0) as usize * ny + p.1.abs_diff(q.1) as usize]
            }
            None => log_cost(a[i], b[j], self.delta),
        }
    }

    #[inline]
    fn bb(&self, b: &[Point2], i: usize, j: usize) -> f64 {
        match &self.table {
            Some((v, ny, _, ib)) => {
                let (p, q) = (ib[i], ib[j]);
                v[p.0.abs_diff(q.0) as usize * ny + p.1.abs_diff(q.1) as usize]
            }
            None => log_cost(b[i], b[j], self.delta),
        }
    }
}

/// Exact `D_δ(μ₁, μ₂)` for nonnegative measures of equal mass.
pub fn kr_distance(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, delta: f64) -> Result<KrResult> {
    kr_distance_on(mu1, mu2, delta, None)
}

/// As [`kr_distance`], tabulating costs when every atom sits on `lattice`.
pub fn kr_distance_on(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, delta: f64, lattice: Option<Lattice>) -> Result<KrResult> {
    check_delta(delta)?;
    for m in [mu1, mu2] {
        if m.weights.iter().any(|&w| w < 0.0) {
            return invalid("kr_distance needs nonnegative weights; use kr_signed for signed data");
        }
    }
    let (ma, mb) = (mu1.total_mass(), mu2.total_mass());
    check_masses(ma, mb)?;
    let empty = KrResult {
        distance: 0.0,
        delta,
        plan: TransportPlan::default(),
        potential_a: vec![0.0; mu1.len()],
        potential_b: vec![0.0; mu2.len()],
        gap: 0.0,
        atoms_a: mu1.len(),
        atoms_b: mu2.len(),
        source: mu1.clone(),
        target: mu2.clone(),
    };
    if ma <= 0.0 {
        return Ok(empty);
    }

    // Drop empty atoms; the solver needs positive integer weights.
    let (quantum, qa_all, qb_all) = quantize(&mu1.weights, &mu2.weights);
    let ia: Vec<usize> = (0..mu1.len()).filter(|&i| qa_all[i] > 0).collect();
    let ib: Vec<usize> = (0..mu2.len()).filter(|&j| qb_all[j] > 0).collect();
    let qa: Vec<i64> = ia.iter().map(|&i| qa_all[i]).collect();
    let qb: Vec<i64> = ib.iter().map(|&j| qb_all[j]).collect();
    let pa: Vec<Point2> = ia.iter().map(|&i| mu1.points[i]).collect();
    let pb: Vec<Point2> = ib.iter().map(|&j| mu2.points[j]).collect();
    let coster = Coster::new(&pa, &pb, delta, lattice);
    let cost = |i: usize, j: usize| coster.ab(&pa, &pb, i, j);
    let bbox_diag = {
        let all = pa.iter().chain(&pb);
        let (lo, hi) = all.fold(
            (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
            |(lo, hi), p| (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y))),
        );
        lo.dist(hi)
    };
    let max_cost = (bbox_diag * (1.0 + 1e-12) / delta).ln_1p();
    let sol = solve_seeded(&pa, &qa, &pb, &qb, &cost, max_cost, delta);

    let mut entries: Vec<(usize, usize, f64)> = sol
        .flows
        .iter()
        .map(|&(i, j, f)| (ia[i], ib[j], f as f64 * quantum))
        .collect();
    entries.sort_by_key(|e| (e.0, e.1));
    let distance: f64 = sol.flows.iter().map(|&(i, j, f)| f as f64 * quantum * cost(i, j)).sum();

    // Extend the target potentials by ζ(z) = min_j (c(z, y_j) + ζ_j), which is
    // c-Lipschitz, then read it off at every atom.
    // The scan stops once no farther target can beat the running minimum.
    let (lo, hi) = knn::bbox(pa.iter().chain(&pb));
    let ids_b: Vec<usize> = (0..pb.len()).collect();
    let grid = knn::Grid::new(&pb, &ids_b, lo, hi);
    let slack = 1e-9 * lo.dist(hi);
    let pot_t = &sol.pot_targets;
    let min_t = pot_t.iter().copied().fold(f64::INFINITY, f64::min);
    let zeta = |z: Point2, c: &dyn Fn(usize) -> f64| {
        let best = std::cell::Cell::new(f64::INFINITY);
        grid.scan(
            z,
            |j| best.set(best.get().min(c(j) + pot_t[j])),
            |free| ((free - slack).max(0.0) / delta).ln_1p() + min_t >= best.get(),
        );
        best.get()
    };
    let zeta_a = |i: usize| zeta(pa[i], &|j| cost(i, j));
    let zeta_b = |l: usize| zeta(pb[l], &|j| coster.bb(&pb, l, j));
    let mut potential_a = vec![0.0; mu1.len()];
    let mut potential_b = vec![0.0; mu2.len()];
    let za: Vec<f64> = (0..pa.len()).into_par_iter().map(zeta_a).collect();
    let zb: Vec<f64> = (0..pb.len()).into_par_iter().map(zeta_b).collect();
    for (k, &i) in ia.iter().enumerate() {
        potential_a[i] = za[k];
    }
    for (k, &j) in ib.iter().enumerate() {
        potential_b[j] = zb[k];
    }
    // Atoms dropped as empty still need a feasible potential value.
    for i in (0..mu1.len()).filter(|&i| qa_all[i] <= 0) {
        potential_a[i] = mu2_extension(&mu1.points[i], &pb, &zb, delta);
    }
    for j in (0..mu2.len()).filter(|&j| qb_all[j] <= 0) {
        potential_b[j] = mu2_extension(&mu2.points[j], &pb, &zb, delta);
    }
    let dual = dual_value(&potential_a, &potential_b, &mu1.weights, &mu2.weights);
    Ok(KrResult {
        distance,
        plan: TransportPlan { entries },
        potential_a,
        potential_b,
        gap: (distance - dual).max(0.0),
        ..empty
    })
}

/// Below this many atoms the seed is plain nearest neighbours.
const COARSEN_BELOW: usize = 4096;

/// Network simplex whose first candidate set comes from the support of a
/// coarsened problem, which saves most column-generation rounds.
fn solve_seeded<C: Fn(usize, usize) -> f64 + Sync>(
    pa: &[Point2],
    qa: &[i64],
    pb: &[Point2],
    qb: &[i64],
    cost: &C,
    max_cost: f64,
    delta: f64,
) -> Solution {
    let first = std::sync::atomic::AtomicBool::new(true);
    let near = |s: &[usize], t: &[usize]| {
        let mut pairs = knn::mutual_pairs(pa, pb, s, t, NEIGHBOURS);
        if first.swap(false, std::sync::atomic::Ordering::Relaxed) && pa.len() + pb.len() >= COARSEN_BELOW {
            pairs.extend(coarse_support(pa, qa, pb, qb, max_cost, delta));
        }
        pairs
    };
    solve_transport(qa, qb, cost, max_cost, &near)
}

/// Fine pairs under the optimal coarse flows after merging atoms into
/// squares of twice the mean spacing.
fn coarse_support(pa: &[Point2], qa: &[i64], pb: &[Point2], qb: &[i64], max_cost: f64, delta: f64) -> Vec<(usize, usize)> {
    let (mut lo, mut hi) = (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in pa.iter().chain(pb) {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let area = ((hi.x - lo.x) * (hi.y - lo.y)).max(f64::MIN_POSITIVE);
    let w = 2.0 * (area / (pa.len() + pb.len()) as f64).sqrt();
    let merge = |pts: &[Point2], q: &[i64]| {
        let mut index: HashMap<(i64, i64), usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut acc: Vec<(f64, f64, i64)> = Vec::new();
        for (i, p) in pts.iter().enumerate() {
            let key = (((p.x - lo.x) / w).floor() as i64, ((p.y - lo.y) / w).floor() as i64);
            let c = *index.entry(key).or_insert_with(|| {
                members.push(Vec::new());
                acc.push((0.0, 0.0, 0));
                members.len() - 1
            });
            members[c].push(i);
            let a = &mut acc[c];
            a.0 += q[i] as f64 * p.x;
            a.1 += q[i] as f64 * p.y;
            a.2 += q[i];
        }
        let points: Vec<Point2> = acc.iter().map(|a| Point2::new(a.0 / a.2 as f64, a.1 / a.2 as f64)).collect();
        let weights: Vec<i64> = acc.iter().map(|a| a.2).collect();
        (points, weights, members)
    };
    let (ca, wa, ma) = merge(pa, qa);
    let (cb, wb, mb) = merge(pb, qb);
    let ccost = |i: usize, j: usize| log_cost(ca[i], cb[j], delta);
    let coarse = solve_seeded(&ca, &wa, &cb, &wb, &ccost, max_cost, delta);
    let mut out = Vec::new();
    for &(i, j, _) in &coarse.flows {
        for &a in &ma[i] {
            out.extend(mb[j].iter().map(|&b| (a, b)));
        }
    }
    out
}

fn mu2_extension(p: &Point2, pb: &[Point2], zb: &[f64], delta: f64) -> f64 {
    pb.iter()
        .zip(zb)
        .map(|(&y, &z)| log_cost(*p, y, delta) + z)
        .fold(f64::INFINITY, f64::min)
}

fn dual_value(za: &[f64], zb: &[f64], a: &[f64], b: &[f64]) -> f64 {
    za.iter().zip(a).map(|(z, w)| z * w).sum::<f64>() - zb.iter().zip(b).map(|(z, w)| z * w).sum::<f64>()
}

/// `D_δ` between two cell fields on the same mesh: atoms are formed for both,
/// the difference is reduced atomwise, and its positive part is transported
/// onto its negative part.
pub fn kr_signed(mesh: &Mesh, field1: &CellField, field2: &CellField, delta: f64, points_per_cell: usize) -> Result<KrResult> {
    check_delta(delta)?;
    let m1 = measure_from_cellfield(mesh, field1, points_per_cell)?;
    let m2 = measure_from_cellfield(mesh, field2, points_per_cell)?;
    kr_signed_on(&m1, &m2, delta, grid_lattice(mesh, points_per_cell))
}

/// Lattice of the sub-cell atoms of a Cartesian mesh.
pub fn grid_lattice(mesh: &Mesh, points_per_cell: usize) -> Option<Lattice> {
    let g = mesh.grid()?;
    let s = match points_per_cell {
        1 => 1,
        4 => 2,
        9 => 3,
        _ => return None,
    };
    let (dx, dy) = (g.dx / s as f64, g.dy / s as f64);
    Some(Lattice {
        lo: g.lo + Point2::new(0.5 * dx, 0.5 * dy),
        dx,
        dy,
        nx: g.nx * s,
        ny: g.ny * s,
    })
}

/// Signed variant on measures: `D_δ((μ₁ - μ₂)⁺, (μ₁ - μ₂)⁻)`.
pub fn kr_signed_measures(m1: &DiscreteMeasure, m2: &DiscreteMeasure, delta: f64) -> Result<KrResult> {
    kr_signed_on(m1, m2, delta, None)
}

fn kr_signed_on(m1: &DiscreteMeasure, m2: &DiscreteMeasure, delta: f64, lattice: Option<Lattice>) -> Result<KrResult> {
    check_delta(delta)?;
    let (ma, mb) = (m1.total_mass(), m2.total_mass());
    let scale = m1.weights.iter().chain(&m2.weights).map(|w| w.abs()).sum::<f64>();
    if (ma - mb).abs() > TOL_MASS * ma.abs().max(mb.abs()).max(f64::MIN_POSITIVE) && (ma - mb).abs() > 1e-15 * scale {
        return Err(Error::UnequalMass { mass_a: ma, mass_b: mb });
    }
    let (pos, mut neg) = m1.signed_difference(m2);
    let (mp, mn) = (pos.total_mass(), neg.total_mass());
    if mp <= 0.0 || mn <= 0.0 {
        return kr_distance(&DiscreteMeasure::default(), &DiscreteMeasure::default(), delta).map(|mut r| {
            r.source = pos;
            r.target = neg;
            r
        });
    }
    // The residual mismatch is within tolerance of the original masses;
    // rescale the negative part so the reduced problem is balanced.
    let f = mp / mn;
    for w in &mut neg.weights {
        *w *= f;
    }
    kr_distance_on(&pos, &neg, delta, lattice)
}

/// Feasibility and optimality check of the dual potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// Largest `|ζ(x) - ζ(y)| - c(x, y)` over all support pairs.
    pub max_violation: f64,
}

/// Recomputes the dual objective and checks `|ζ(x) - ζ(y)| <= c(x, y)` on all
/// pairs of support points of both measures.
pub fn dual_certify(result: &KrResult, delta: f64) -> Result<GapReport> {
    let pts: Vec<(Point2, f64)> = result
        .source
        .points
        .iter()
        .copied()
        .zip(result.potential_a.iter().copied())
        .chain(result.target.points.iter().copied().zip(result.potential_b.iter().copied()))
        .collect();
    let mut worst = f64::NEG_INFINITY;
    for (a, &(x, zx)) in pts.iter().enumerate() {
        for &(y, zy) in &pts[a + 1..] {
            worst = worst.max((zx - zy).abs() - log_cost(x, y, delta));
        }
    }
    let worst = worst.max(0.0);
    let dual = dual_value(&result.potential_a, &result.potential_b, &result.source.weights, &result.target.weights);
    let report = GapReport {
        primal: result.distance,
        dual,
        gap: result.distance - dual,
        max_violation: worst,
    };
    if worst > 1e-8 {
        return Err(Error::CertificationFailure(format!(
            "potential violates the Lipschitz bound by {worst:.3e}"
        )));
    }
    Ok(report)
}

/// Dual objective of an arbitrary potential, for weak-duality checks.
pub fn dual_objective(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, zeta: impl Fn(Point2) -> f64) -> f64 {
    mu1.points.iter().zip(&mu1.weights).map(|(&p, w)| zeta(p) * w).sum::<f64>()
        - mu2.points.iter().zip(&mu2.weights).map(|(&p, w)| zeta(p) * w).sum::<f64>()
}

/// Optimal value by a dense two-phase simplex; for cross-checking on small
/// supports.
pub fn brute_force_kr(mu1: &DiscreteMeasure, mu2: &DiscreteMeasure, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let (n, m) = (mu1.len(), mu2.len());
    if n > BRUTE_FORCE_CAP || m > BRUTE_FORCE_CAP {
        return invalid(format!("brute force supports at most {BRUTE_FORCE_CAP} atoms per side"));
    }
    check_masses(mu1.total_mass(), mu2.total_mass())?;
    if n == 0 || m == 0 || mu1.total_mass() <= 0.0 {
        return Ok(0.0);
    }
    let scale = mu1.total_mass();
    let c: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| log_cost(mu1.points[i], mu2.points[j], delta))
        .collect();
    let mut rows = Vec::with_capacity(n + m);
    let mut rhs = Vec::with_capacity(n + m);
    for i in 0..n {
        let mut r = vec![0.0; n * m];
        for j in 0..m {
            r[i * m + j] = 1.0;
        }
        rows.push(r);
        rhs.push(mu1.weights[i] / scale);
    }
    let fb = mu1.total_mass() / mu2.total_mass();
    for j in 0..m {
        let mut r = vec![0.0; n * m];
        for i in 0..n {
            r[i * m + j] = 1.0;
        }
        rows.push(r);
        rhs.push(mu2.weights[j] * fb / scale);
    }
    let (v, _) = dense_simplex::minimize(&c, &rows, &rhs)
        .ok_or_else(|| Error::InvalidArgument("transport LP reported infeasible".into()))?;
    Ok(v * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cartesian_mesh, Domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, mass: f64) -> DiscreteMeasure {
        let pts: Vec<Point2> = (0..n).map(|_| Point2::new(rng.random(), rng.random())).collect();
        let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x *= mass / s);
        DiscreteMeasure::new(pts, w).unwrap()
    }

    #[test]
    fn single_pair_cost() {
        let a = DiscreteMeasure::new(vec![Point2::new(0.0, 0.0)], vec![1.0]).unwrap();
        let b = DiscreteMeasure::new(vec![Point2::new(0.3, 0.4)], vec![1.0]).unwrap();
        let r = kr_distance(&a, &b, 0.1).unwrap();
        assert!((r.distance - 6f64.ln()).abs() < 1e-14);
        assert!((brute_force_kr(&a, &b, 0.1).unwrap() - 6f64.ln()).abs() < 1e-14);
        let g = dual_certify(&r, 0.1).unwrap();
        assert!(g.gap.abs() < 1e-14);
    }

    #[test]
    fn equal_measures_are_at_distance_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_measure(&mut rng, 6, 2.0);
        let r = kr_distance(&a, &a, 0.05).unwrap();
        assert!(r.distance.abs() < 1e-15);
        for &(i, j, _) in &r.plan.entries {
            assert_eq!(i, j);
        }
        assert!(brute_force_kr(&a, &a, 0.05).unwrap().abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..=6);
            let m = rng.random_range(1..=6);
            let a = random_measure(&mut rng, n, 1.3);
            let b = random_measure(&mut rng, m, 1.3);
            let r = kr_distance(&a, &b, 0.07).unwrap();
            let bf = brute_force_kr(&a, &b, 0.07).unwrap();
            assert!((r.distance - bf).abs() < 1e-9, "{} vs {bf}", r.distance);
            assert!(r.plan.marginal_residual(&a.weights, &b.weights) < 1e-10 * 1.3);
            let g = dual_certify(&r, 0.07).unwrap();
            assert!(g.gap <= 1e-8 * r.distance.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn unequal_masses_rejected() {
        let a = DiscreteMeasure::new(vec![Point2::new(0.0, 0.0)], vec![1.0]).unwrap();
        let b = DiscreteMeasure::new(vec![Point2::new(0.0, 1.0)], vec![1.1]).unwrap();
        assert!(matches!(kr_distance(&a, &b, 0.1), Err(Error::UnequalMass { .. })));
        assert!(kr_distance(&a, &a, 0.0).is_err());
    }

    #[test]
    fn two_cell_signed_distance() {
        let m = build_cartesian_mesh(&Domain::unit_square(), 2, 1).unwrap();
        let f1 = CellField::new(vec![1.0, 0.0], 0.0);
        let f2 = CellField::new(vec![0.0, 1.0], 0.0);
        let delta = 0.2;
        let r = kr_signed(&m, &f1, &f2, delta, 1).unwrap();
        assert!((r.distance - 0.5 * (0.5f64 / delta).ln_1p()).abs() < 1e-15);
        assert_eq!(kr_signed(&m, &f1, &f1, delta, 1).unwrap().distance, 0.0);
    }

    #[test]
    fn sub_cell_atoms() {
        let m = build_cartesian_mesh(&Domain::unit_square(), 1, 1).unwrap();
        let f = CellField::new(vec![2.0], 0.0);
        let mu = measure_from_cellfield(&m, &f, 4).unwrap();
        assert_eq!(mu.len(), 4);
        assert!(mu.weights.iter().all(|&w| (w - 0.5).abs() < 1e-15));
        assert!(mu.points.contains(&Point2::new(0.25, 0.75)));
        assert!(measure_from_cellfield(&m, &f, 3).is_err());
    }
}
