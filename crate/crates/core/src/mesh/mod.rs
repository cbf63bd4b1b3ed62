//! Admissible tessellations: cells with orthogonal two-point fluxes.
//!
//! A mesh is a finite family of closed convex cells tiling the domain, each
//! with a center `x_K` such that the segment joining neighbouring centers is
//! orthogonal to the shared face. Cartesian grids (centers at centroids) and
//! domain-clipped Voronoi diagrams (centers at seeds) both qualify.

mod text;
mod voronoi;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{self, Point2};

pub use text::{read_mesh, write_mesh};
pub use voronoi::build_voronoi_mesh;

/// Default absolute tolerance on the unit-normal deviation of `(x_L - x_K)/d_KL`.
pub const TOL_ORTH: f64 = 1e-9;
/// Default relative tolerance on `Σ|K| = |Ω|`.
pub const TOL_VOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainKind {
    Rectangle,
    ConvexPolygon,
}

/// A convex polygonal domain with counter-clockwise vertices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Domain {
    kind: DomainKind,
    vertices: Vec<Point2>,
    lo: Point2,
    hi: Point2,
}

impl Domain {
    pub fn rectangle(lo: Point2, hi: Point2) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi.x <= lo.x || hi.y <= lo.y {
            return invalid(format!("degenerate rectangle {lo:?}..{hi:?}"));
        }
        Ok(Self {
            kind: DomainKind::Rectangle,
            vertices: vec![lo, Point2::new(hi.x, lo.y), hi, Point2::new(lo.x, hi.y)],
            lo,
            hi,
        })
    }

    pub fn unit_square() -> Self {
        Self::rectangle(Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)).expect("unit square")
    }

    pub fn convex_polygon(vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 3 || vertices.iter().any(|p| !p.is_finite()) {
            return invalid("polygon needs at least three finite vertices");
        }
        if geometry::signed_area(&vertices) <= 0.0 {
            return invalid("polygon must be non-degenerate and counter-clockwise");
        }
        if !geometry::is_convex_ccw(&vertices, 1e-12) {
            return invalid("polygon is not convex");
        }
        let lo = vertices
            .iter()
            .fold(Point2::new(f64::INFINITY, f64::INFINITY), |a, p| {
                Point2::new(a.x.min(p.x), a.y.min(p.y))
            });
        let hi = vertices
            .iter()
            .fold(Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, p| {
                Point2::new(a.x.max(p.x), a.y.max(p.y))
            });
        Ok(Self {
            kind: DomainKind::ConvexPolygon,
            vertices,
            lo,
            hi,
        })
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn bbox(&self) -> (Point2, Point2) {
        (self.lo, self.hi)
    }

    pub fn area(&self) -> f64 {
        geometry::signed_area(&self.vertices)
    }

    pub fn diameter(&self) -> f64 {
        geometry::diameter(&self.vertices)
    }

    /// Signed distance to the boundary, positive inside.
    pub fn inner_distance(&self, p: Point2) -> f64 {
        geometry::convex_inner_distance(&self.vertices, p)
    }

    /// Edges as `(start, end, outward unit normal)`.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let e = b - a;
            (a, b, Point2::new(e.y, -e.x).normalized())
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell {
    pub id: usize,
    /// The point `x_K`.
    pub center: Point2,
    pub volume: f64,
    /// Counter-clockwise vertex loop; empty for meshes read without geometry.
    pub vertices: Vec<Point2>,
    pub faces: Vec<usize>,
}

/// A face `K|L`. `outer == None` marks a face on the domain boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Face {
    pub id: usize,
    pub inner: usize,
    pub outer: Option<usize>,
    /// One-dimensional measure `|K|L|`.
    pub area: f64,
    /// `|x_L - x_K|` for interior faces, distance from `x_K` to the face line otherwise.
    pub d_kl: f64,
    /// Unit normal pointing from `inner` towards `outer` (outward on the boundary).
    pub normal: Point2,
    pub endpoints: Option<[Point2; 2]>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.outer.is_none()
    }
}

/// Layout of a uniform axis-aligned grid; cell `(i, j)` has id `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianGrid {
    pub nx: usize,
    pub ny: usize,
    pub lo: Point2,
    pub dx: f64,
    pub dy: f64,
}

impl CartesianGrid {
    pub fn locate(&self, p: Point2) -> Option<usize> {
        let fx = (p.x - self.lo.x) / self.dx;
        let fy = (p.y - self.lo.y) / self.dy;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.nx as f64 && fy <= self.ny as f64) {
            return None;
        }
        let i = (fx as usize).min(self.nx - 1);
        let j = (fy as usize).min(self.ny - 1);
        Some(j * self.nx + i)
    }

    pub fn cell_bounds(&self, id: usize) -> (Point2, Point2) {
        let i = id % self.nx;
        let j = id / self.nx;
        let lo = Point2::new(
            self.lo.x + i as f64 * self.dx,
            self.lo.y + j as f64 * self.dy,
        );
        (lo, lo + Point2::new(self.dx, self.dy))
    }
}

/// A face seen from one of its cells.
#[derive(Debug, Clone, Copy)]
pub struct Neighbor<'a> {
    pub face: &'a Face,
    pub other: Option<usize>,
    /// `+1` when the viewing cell is the face's `inner` cell.
    pub sign: f64,
}

impl Neighbor<'_> {
    pub fn normal(&self) -> Point2 {
        self.face.normal * self.sign
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mesh {
    domain: Option<Domain>,
    cells: Vec<Cell>,
    faces: Vec<Face>,
    h: Option<f64>,
    grid: Option<CartesianGrid>,
}

impl Mesh {
    pub(crate) fn from_parts(
        domain: Option<Domain>,
        cells: Vec<Cell>,
        faces: Vec<Face>,
        grid: Option<CartesianGrid>,
    ) -> Self {
        let h = if !cells.is_empty() && cells.iter().all(|c| c.vertices.len() >= 3) {
            Some(
                cells
                    .iter()
                    .map(|c| geometry::diameter(&c.vertices))
                    .fold(0.0, f64::max),
            )
        } else {
            None
        };
        Self {
            domain,
            cells,
            faces,
            h,
            grid,
        }
    }

    pub fn domain(&self) -> Option<&Domain> {
        self.domain.as_ref()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn grid(&self) -> Option<&CartesianGrid> {
        self.grid.as_ref()
    }

    pub fn has_geometry(&self) -> bool {
        self.h.is_some()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.volume).collect()
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    pub fn neighbors(&self, cell: usize) -> impl Iterator<Item = Neighbor<'_>> + '_ {
        self.cells[cell].faces.iter().map(move |&f| {
            let face = &self.faces[f];
            if face.inner == cell {
                Neighbor {
                    face,
                    other: face.outer,
                    sign: 1.0,
                }
            } else {
                Neighbor {
                    face,
                    other: Some(face.inner),
                    sign: -1.0,
                }
            }
        })
    }

    pub fn interior_faces(&self) -> impl Iterator<Item = &Face> + '_ {
        self.faces.iter().filter(|f| !f.is_boundary())
    }

    /// Finds the cell containing `p`, if any.
    pub fn locate(&self, p: Point2) -> Option<usize> {
        if let Some(g) = &self.grid {
            return g.locate(p);
        }
        let mut best = None;
        let mut best_d = -1e-12;
        for c in &self.cells {
            if c.vertices.len() < 3 {
                continue;
            }
            let d = geometry::convex_inner_distance(&c.vertices, p);
            if d >= best_d {
                best_d = d;
                best = Some(c.id);
            }
        }
        best
    }
}

/// Uniform grid of `nx × ny` rectangles with centers at the centroids.
pub fn build_cartesian_mesh(domain: &Domain, nx: usize, ny: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return invalid(format!("cell counts must be positive, got {nx}×{ny}"));
    }
    if domain.kind() != DomainKind::Rectangle {
        return invalid("Cartesian meshes need a rectangular domain");
    }
    let (lo, hi) = domain.bbox();
    let dx = (hi.x - lo.x) / nx as f64;
    let dy = (hi.y - lo.y) / ny as f64;
    let grid = CartesianGrid { nx, ny, lo, dx, dy };
    let node = |i: usize, j: usize| {
        Point2::new(
            if i == nx { hi.x } else { lo.x + i as f64 * dx },
            if j == ny { hi.y } else { lo.y + j as f64 * dy },
        )
    };
    let mut cells: Vec<Cell> = (0..nx * ny)
        .map(|id| {
            let (i, j) = (id % nx, id / nx);
            let v = vec![node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)];
            let center = Point2::new(0.5 * (v[0].x + v[1].x), 0.5 * (v[0].y + v[3].y));
            let volume = (v[1].x - v[0].x) * (v[3].y - v[0].y);
            Cell {
                id,
                center,
                volume,
                vertices: v,
                faces: Vec::with_capacity(4),
            }
        })
        .collect();
    let mut faces = Vec::with_capacity(2 * nx * ny + nx + ny);
    let push = |faces: &mut Vec<Face>, cells: &mut Vec<Cell>, mut f: Face| {
        f.id = faces.len();
        cells[f.inner].faces.push(f.id);
        if let Some(o) = f.outer {
            cells[o].faces.push(f.id);
        }
        faces.push(f);
    };
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            if i + 1 < nx {
                let l = k + 1;
                let d = cells[l].center.x - cells[k].center.x;
                let f = Face {
                    id: 0,
                    inner: k,
                    outer: Some(l),
                    area: cells[k].vertices[2].y - cells[k].vertices[1].y,
                    d_kl: d,
                    normal: Point2::new(1.0, 0.0),
                    endpoints: Some([cells[k].vertices[1], cells[k].vertices[2]]),
                };
                push(&mut faces, &mut cells, f);
            }
            if j + 1 < ny {
                let l = k + nx;
                let d = cells[l].center.y - cells[k].center.y;
                let f = Face {
                    id: 0,
                    inner: k,
                    outer: Some(l),
                    area: cells[k].vertices[2].x - cells[k].vertices[3].x,
                    d_kl: d,
                    normal: Point2::new(0.0, 1.0),
                    endpoints: Some([cells[k].vertices[3], cells[k].vertices[2]]),
                };
                push(&mut faces, &mut cells, f);
            }
        }
    }
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let v = cells[k].vertices.clone();
            let c = cells[k].center;
            let mut boundary = Vec::new();
            if j == 0 {
                boundary.push((v[0], v[1], Point2::new(0.0, -1.0), c.y - v[0].y));
            }
            if i + 1 == nx {
                boundary.push((v[1], v[2], Point2::new(1.0, 0.0), v[1].x - c.x));
            }
            if j + 1 == ny {
                boundary.push((v[2], v[3], Point2::new(0.0, 1.0), v[2].y - c.y));
            }
            if i == 0 {
                boundary.push((v[3], v[0], Point2::new(-1.0, 0.0), c.x - v[0].x));
            }
            for (a, b, normal, d) in boundary {
                let f = Face {
                    id: 0,
                    inner: k,
                    outer: None,
                    area: a.dist(b),
                    d_kl: d,
                    normal,
                    endpoints: Some([a, b]),
                };
                push(&mut faces, &mut cells, f);
            }
        }
    }
    Ok(Mesh::from_parts(
        Some(domain.clone()),
        cells,
        faces,
        Some(grid),
    ))
}

/// Maximal cell diameter.
pub fn mesh_size(mesh: &Mesh) -> Result<f64> {
    if mesh.cells.is_empty() {
        return invalid("mesh has no cells");
    }
    match mesh.h {
        Some(h) => Ok(h),
        None => invalid("mesh carries no cell geometry; its size is undefined"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub orth: f64,
    pub vol: f64,
    /// Admissible value of `max_K |∂K|/|K| · h`.
    pub isoperimetric: f64,
    /// Meshes with at most this many cells get a pairwise overlap check.
    pub pairwise_limit: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            orth: TOL_ORTH,
            vol: TOL_VOL,
            isoperimetric: 64.0,
            pairwise_limit: 400,
        }
    }
}

/// Per-clause admissibility diagnostics. Clauses that need polygon geometry
/// are `None` for meshes loaded without it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityReport {
    pub n_cells: usize,
    pub n_faces: usize,
    pub h: Option<f64>,
    pub convexity: Option<bool>,
    pub tiling: Option<bool>,
    pub center_placement: Option<bool>,
    pub orthogonality: bool,
    pub antisymmetry: bool,
    pub isoperimetric: Option<bool>,
    pub positive_measures: bool,
    pub volume_sum: f64,
    pub domain_area: Option<f64>,
    pub max_orth_deviation: f64,
    pub max_distance_mismatch: f64,
    /// `max_K |∂K|/|K|`.
    pub max_perimeter_ratio: Option<f64>,
    /// `max_K |∂K|/|K| · h`, the isoperimetric constant.
    pub isoperimetric_constant: Option<f64>,
    pub max_closure_defect: Option<f64>,
    pub admissible: bool,
}

/// Checks each admissibility clause; never fails on bad geometry.
pub fn validate_admissibility(mesh: &Mesh, tol: &Tolerances) -> QualityReport {
    let cells = &mesh.cells;
    let faces = &mesh.faces;
    let geom = mesh.has_geometry();

    let positive_measures = cells.iter().all(|c| c.volume > 0.0)
        && faces.iter().all(|f| f.area > 0.0)
        && faces
            .iter()
            .filter(|f| !f.is_boundary())
            .all(|f| f.d_kl > 0.0);

    let mut max_dev: f64 = 0.0;
    let mut max_dist: f64 = 0.0;
    let mut orientation_ok = true;
    for f in faces.iter() {
        if let Some(l) = f.outer {
            if l >= cells.len() || f.inner >= cells.len() {
                orientation_ok = false;
                continue;
            }
            let e = cells[l].center - cells[f.inner].center;
            let len = e.norm();
            if len == 0.0 {
                max_dev = f64::INFINITY;
                continue;
            }
            max_dev = max_dev.max((e * (1.0 / len) - f.normal).norm());
            max_dist = max_dist.max((len - f.d_kl).abs() / len);
        }
        if (f.normal.norm() - 1.0).abs() > tol.orth {
            max_dev = max_dev.max((f.normal.norm() - 1.0).abs());
        }
    }
    let orthogonality = orientation_ok && max_dev <= tol.orth && max_dist <= tol.orth;

    // Each face must appear in the lists of exactly the cells it separates.
    let mut antisymmetry = orientation_ok;
    for f in faces.iter() {
        let listed = |c: usize| cells.get(c).is_some_and(|c| c.faces.contains(&f.id));
        if !listed(f.inner) || f.outer.is_some_and(|l| !listed(l) || l == f.inner) {
            antisymmetry = false;
        }
    }
    for c in cells.iter() {
        for &fid in &c.faces {
            match faces.get(fid) {
                Some(f) if f.inner == c.id || f.outer == Some(c.id) => {}
                _ => antisymmetry = false,
            }
        }
    }

    let volume_sum: f64 = cells.iter().map(|c| c.volume).sum();
    let domain_area = mesh.domain.as_ref().map(Domain::area);

    let (mut convexity, mut tiling, mut center_placement, mut isoperimetric) =
        (None, None, None, None);
    let (mut max_ratio, mut iso_const, mut max_closure) = (None, None, None);
    if geom {
        let h = mesh.h.unwrap_or(0.0);
        convexity = Some(
            cells
                .iter()
                .all(|c| geometry::is_convex_ccw(&c.vertices, 1e-9)),
        );
        let ratio = cells
            .iter()
            .map(|c| geometry::perimeter(&c.vertices) / c.volume)
            .fold(0.0, f64::max);
        max_ratio = Some(ratio);
        iso_const = Some(ratio * h);
        isoperimetric = Some(ratio * h <= tol.isoperimetric);

        let mut placement = true;
        for c in cells.iter() {
            let scale = geometry::diameter(&c.vertices).max(f64::MIN_POSITIVE);
            if geometry::convex_inner_distance(&c.vertices, c.center) < -1e-12 * scale {
                placement = false;
            }
            if let Some(d) = &mesh.domain {
                if d.inner_distance(c.center) <= 1e-12 * scale {
                    placement = false;
                }
            }
        }
        center_placement = Some(placement);

        // Closure: Σ_f |f| n_f over a cell's faces vanishes for a closed polygon.
        let mut closure: f64 = 0.0;
        for c in cells.iter() {
            let s = mesh
                .neighbors(c.id)
                .fold(Point2::default(), |acc, nb| acc + nb.normal() * nb.face.area);
            let per = geometry::perimeter(&c.vertices);
            closure = closure.max(s.norm() / per);
        }
        max_closure = Some(closure);

        let mut tiles = match domain_area {
            Some(a) => (volume_sum - a).abs() <= tol.vol * a,
            None => true,
        };
        tiles &= closure <= 1e-9;
        for c in cells.iter() {
            let a = geometry::signed_area(&c.vertices);
            if (a - c.volume).abs() > 1e-9 * c.volume {
                tiles = false;
            }
        }
        if cells.len() <= tol.pairwise_limit {
            'outer: for (i, a) in cells.iter().enumerate() {
                for b in cells.iter().skip(i + 1) {
                    let inter = geometry::convex_intersection(&a.vertices, &b.vertices);
                    if geometry::signed_area(&inter) > tol.vol * a.volume.min(b.volume) {
                        tiles = false;
                        break 'outer;
                    }
                }
            }
        }
        tiling = Some(tiles);
    } else if let Some(a) = domain_area {
        tiling = Some((volume_sum - a).abs() <= tol.vol * a);
    }

    let admissible = positive_measures
        && orthogonality
        && antisymmetry
        && [convexity, tiling, center_placement, isoperimetric]
            .iter()
            .all(|c| c.unwrap_or(true));

    QualityReport {
        n_cells: cells.len(),
        n_faces: faces.len(),
        h: mesh.h,
        convexity,
        tiling,
        center_placement,
        orthogonality,
        antisymmetry,
        isoperimetric,
        positive_measures,
        volume_sum,
        domain_area,
        max_orth_deviation: max_dev,
        max_distance_mismatch: max_dist,
        max_perimeter_ratio: max_ratio,
        isoperimetric_constant: iso_const,
        max_closure_defect: max_closure,
        admissible,
    }
}

impl Mesh {
    /// Moves `x_K` of one cell; used to build non-admissible counterexamples.
    pub fn with_center_moved(mut self, cell: usize, to: Point2) -> Self {
        self.cells[cell].center = to;
        self
    }
}
