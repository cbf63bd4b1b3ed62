//! Discrete data of the scheme: cell-averaged datum, face/time-averaged normal
//! velocities, discrete divergence and the maximal time step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Point2;
use crate::mesh::{Cell, Domain, Mesh};
use crate::quadrature;

/// A scalar function on the plane.
pub trait ScalarField: Sync {
    fn value(&self, x: Point2) -> f64;

    /// Exact mean over the rectangle `[lo, hi]`, when known in closed form.
    fn rect_average(&self, _lo: Point2, _hi: Point2) -> Option<f64> {
        None
    }
}

impl<F: Fn(Point2) -> f64 + Sync> ScalarField for F {
    fn value(&self, x: Point2) -> f64 {
        self(x)
    }
}

/// A velocity field `u(t, x)` with its declared bounds.
pub trait VelocityField: Sync {
    fn velocity(&self, t: f64, x: Point2) -> Point2;

    /// Analytic divergence, if available.
    fn divergence(&self, _t: f64, _x: Point2) -> Option<f64> {
        None
    }

    /// Declared bound on `|u|`.
    fn sup_norm(&self) -> f64;

    fn is_steady(&self) -> bool {
        false
    }
}

type DivFn = Box<dyn Fn(f64, Point2) -> f64 + Send + Sync>;

/// Velocity field backed by closures.
pub struct FnVelocity<F> {
    f: F,
    bound: f64,
    div: Option<DivFn>,
    steady: bool,
}

impl<F: Fn(f64, Point2) -> Point2 + Sync> FnVelocity<F> {
    pub fn new(f: F, bound: f64) -> Self {
        Self {
            f,
            bound,
            div: None,
            steady: false,
        }
    }

    pub fn steady(mut self) -> Self {
        self.steady = true;
        self
    }

    pub fn with_divergence(mut self, d: impl Fn(f64, Point2) -> f64 + Send + Sync + 'static) -> Self {
        self.div = Some(Box::new(d));
        self
    }
}

impl<F: Fn(f64, Point2) -> Point2 + Sync> VelocityField for FnVelocity<F> {
    fn velocity(&self, t: f64, x: Point2) -> Point2 {
        (self.f)(t, x)
    }
    fn divergence(&self, t: f64, x: Point2) -> Option<f64> {
        self.div.as_ref().map(|d| d(t, x))
    }
    fn sup_norm(&self) -> f64 {
        self.bound
    }
    fn is_steady(&self) -> bool {
        self.steady
    }
}

/// Piecewise-constant field, one value per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellField {
    pub values: Vec<f64>,
    pub time: f64,
}

impl CellField {
    pub fn new(values: Vec<f64>, time: f64) -> Self {
        Self { values, time }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::new(vec![c; n], 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_len(&self, mesh: &Mesh) -> Result<()> {
        if self.values.len() != mesh.n_cells() {
            return invalid(format!(
                "field has {} values but the mesh has {} cells",
                self.values.len(),
                mesh.n_cells()
            ));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!("cell {i} holds a non-finite value")));
        }
        Ok(())
    }

    /// `Σ_K |K| θ_K`.
    pub fn mass(&self, mesh: &Mesh) -> f64 {
        weighted_sum(mesh, &self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete `L^q` norm; `q = ∞` gives the max norm.
    pub fn lq_norm(&self, mesh: &Mesh, q: f64) -> f64 {
        lq_norm(mesh, &self.values, q)
    }
}

pub(crate) fn weighted_sum(mesh: &Mesh, v: &[f64]) -> f64 {
    mesh.cells().iter().zip(v).map(|(c, x)| c.volume * x).sum()
}

pub(crate) fn lq_norm(mesh: &Mesh, v: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return v.iter().fold(0.0, |m, x| m.max(x.abs()));
    }
    let s: f64 = mesh
        .cells()
        .iter()
        .zip(v)
        .map(|(c, x)| c.volume * x.abs().powf(q))
        .sum();
    s.powf(1.0 / q)
}

fn axis_aligned_box(cell: &Cell) -> Option<(Point2, Point2)> {
    let v = &cell.vertices;
    if v.len() != 4 {
        return None;
    }
    let aligned = (0..4).all(|i| {
        let a = v[i];
        let b = v[(i + 1) % 4];
        a.x == b.x || a.y == b.y
    });
    if !aligned {
        return None;
    }
    let lo = Point2::new(v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min), v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min));
    let hi = Point2::new(v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max), v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max));
    Some((lo, hi))
}

/// Mean of `f` over one cell: closed form on rectangles when the field offers
/// it, triangulated Gauss quadrature otherwise.
pub fn cell_average(f: &dyn ScalarField, cell: &Cell, quad_order: usize) -> Result<f64> {
    if let Some((lo, hi)) = axis_aligned_box(cell) {
        if let Some(a) = f.rect_average(lo, hi) {
            return if a.is_finite() {
                Ok(a)
            } else {
                Err(Error::NumericInput(format!("non-finite average on cell {}", cell.id)))
            };
        }
    }
    let mut s = 0.0;
    let mut w_sum = 0.0;
    for (p, w) in quadrature::polygon_rule(quad_order, &cell.vertices) {
        let v = f.value(p);
        if !v.is_finite() {
            return Err(Error::NumericInput(format!("datum is {v} at {p:?}")));
        }
        s += w * v;
        w_sum += w;
    }
    Ok(s / w_sum)
}

/// `θ_K⁰ = ⨍_K θ⁰`.
pub fn discretize_initial_datum(f: &dyn ScalarField, mesh: &Mesh, quad_order: usize) -> Result<CellField> {
    if quad_order == 0 {
        return invalid("quadrature order must be at least 1");
    }
    if !mesh.has_geometry() {
        return invalid("datum discretization needs cell geometry");
    }
    let values = mesh
        .cells()
        .par_iter()
        .map(|c| cell_average(f, c, quad_order))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellField::new(values, 0.0))
}

/// Face/time-averaged normal velocities `u_KL^n`, stored once per face with
/// the sign of `n_KL`; boundary faces carry zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluxField {
    k: f64,
    n_steps: usize,
    steady: bool,
    slabs: Vec<Vec<f64>>,
}

impl FluxField {
    /// Builds a flux field from explicit per-step face values.
    pub fn from_slabs(k: f64, n_steps: usize, slabs: Vec<Vec<f64>>) -> Result<Self> {
        let steady = slabs.len() == 1;
        if !steady && slabs.len() != n_steps {
            return invalid(format!("expected 1 or {n_steps} slabs, got {}", slabs.len()));
        }
        Ok(Self {
            k,
            n_steps,
            steady,
            slabs,
        })
    }

    pub fn zero(mesh: &Mesh, k: f64, n_steps: usize) -> Self {
        Self {
            k,
            n_steps,
            steady: true,
            slabs: vec![vec![0.0; mesh.faces().len()]],
        }
    }

    pub fn time_step(&self) -> f64 {
        self.k
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_final(&self) -> f64 {
        self.k * self.n_steps as f64
    }

    pub fn is_steady(&self) -> bool {
        self.steady
    }

    /// `u_KL^n` for every face, oriented along the stored face normal.
    pub fn slab(&self, n: usize) -> &[f64] {
        if self.steady {
            &self.slabs[0]
        } else {
            &self.slabs[n]
        }
    }

    /// `u_KL^n` seen from `cell` across `face`.
    pub fn from_cell(&self, mesh: &Mesh, n: usize, cell: usize, face: usize) -> f64 {
        let f = &mesh.faces()[face];
        let v = self.slab(n)[face];
        if f.inner == cell {
            v
        } else {
            -v
        }
    }
}

/// Number of steps `N` with `T = N k`.
pub fn step_count(k: f64, t_final: f64) -> Result<usize> {
    if !(k > 0.0 && t_final > 0.0) {
        return invalid("time step and horizon must be positive");
    }
    let n = (t_final / k).round();
    if n < 1.0 || (n * k - t_final).abs() > 1e-12 * t_final.max(1.0) {
        return invalid(format!(
            "T/k = {} is not an integer; choose N and set k = T/N",
            t_final / k
        ));
    }
    Ok(n as usize)
}

pub fn discretize_velocity(
    u: &dyn VelocityField,
    mesh: &Mesh,
    k: f64,
    t_final: f64,
    quad_face: usize,
    quad_time: usize,
) -> Result<FluxField> {
    if quad_face == 0 || quad_time == 0 {
        return invalid("quadrature orders must be at least 1");
    }
    let n_steps = step_count(k, t_final)?;
    if mesh.interior_faces().any(|f| f.endpoints.is_none()) {
        return invalid("velocity discretization needs face endpoints");
    }
    let steady = u.is_steady();
    let slab_count = if steady { 1 } else { n_steps };
    let face_rule = quadrature::interval_rule(quad_face, 0.0, 1.0);
    let slabs = (0..slab_count)
        .map(|n| {
            let t0 = n as f64 * k;
            let time_rule = quadrature::interval_rule(quad_time, t0, t0 + k);
            mesh.faces()
                .par_iter()
                .map(|f| {
                    if f.is_boundary() {
                        return 0.0;
                    }
                    let [a, b] = f.endpoints.unwrap();
                    let mut s = 0.0;
                    for &(t, wt) in &time_rule {
                        for &(r, wr) in &face_rule {
                            s += wt * wr * u.velocity(t, a.lerp(b, r)).dot(f.normal);
                        }
                    }
                    s / k
                })
                .collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>();
    for (n, s) in slabs.iter().enumerate() {
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!("velocity flux on face {i} at slab {n} is not finite")));
        }
    }
    Ok(FluxField {
        k,
        n_steps,
        steady,
        slabs,
    })
}

/// `(∇·u)_K^n = Σ_{L∼K} |K|L| u_KL^n / |K|`.
pub fn discrete_divergence(flux: &FluxField, mesh: &Mesh, n: usize) -> Result<CellField> {
    if n >= flux.n_steps {
        return invalid(format!("time index {n} out of range 0..{}", flux.n_steps));
    }
    let slab = flux.slab(n);
    let values = mesh
        .cells()
        .iter()
        .map(|c| {
            let s: f64 = mesh
                .neighbors(c.id)
                .filter(|nb| nb.other.is_some())
                .map(|nb| nb.face.area * nb.sign * slab[nb.face.id])
                .sum();
            s / c.volume
        })
        .collect();
    Ok(CellField::new(values, n as f64 * flux.k))
}

/// `‖(∇·u)⁻_{k,h}‖_{L¹(L^∞)} = k Σ_n max_K (∇·u)_K^{n,-}`, i.e. `log Λ_{k,h}`.
pub fn discrete_compressibility(flux: &FluxField, mesh: &Mesh) -> f64 {
    let per_slab = |n: usize| {
        discrete_divergence(flux, mesh, n)
            .map(|d| d.values.iter().fold(0.0_f64, |m, v| m.max(-v)))
            .unwrap_or(0.0)
    };
    if flux.steady {
        flux.k * flux.n_steps as f64 * per_slab(0)
    } else {
        (0..flux.n_steps).map(|n| flux.k * per_slab(n)).sum()
    }
}

/// Largest negative divergence per discrete time slab, `max_K (∇·u)_K^{n,-}`.
pub fn discrete_negative_divergence(flux: &FluxField, mesh: &Mesh) -> Vec<f64> {
    let slabs = if flux.steady { 1 } else { flux.n_steps };
    (0..slabs)
        .map(|n| {
            discrete_divergence(flux, mesh, n)
                .map(|d| d.values.iter().fold(0.0_f64, |m, v| m.max(-v)))
                .unwrap_or(0.0)
        })
        .collect()
}

/// Result of [`compute_kmax`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMax {
    pub value: f64,
    /// `∫_0^T ‖(∇·u)⁻(t)‖_{L^∞} dt`.
    pub compressibility: f64,
    /// True when the divergence was estimated by finite differences, which
    /// under-estimates its supremum.
    pub estimated: bool,
}

/// Grid resolution for sampling `‖(∇·u)⁻(t)‖_{L^∞}` in space.
pub const DIVERGENCE_SAMPLES: usize = 64;
const TIME_SAMPLES: usize = 1024;

/// `sup_x (∇·u)⁻(t, x)` sampled on a grid over the domain.
pub fn sampled_negative_divergence(u: &dyn VelocityField, domain: &Domain, t: f64) -> (f64, bool) {
    let (lo, hi) = domain.bbox();
    let m = DIVERGENCE_SAMPLES;
    let eta = 1e-6 * domain.diameter();
    let mut worst: f64 = 0.0;
    let mut estimated = false;
    for j in 0..m {
        for i in 0..m {
            let p = Point2::new(
                lo.x + (i as f64 + 0.5) / m as f64 * (hi.x - lo.x),
                lo.y + (j as f64 + 0.5) / m as f64 * (hi.y - lo.y),
            );
            if domain.inner_distance(p) < 0.0 {
                continue;
            }
            let d = match u.divergence(t, p) {
                Some(d) => d,
                None => {
                    estimated = true;
                    let ex = Point2::new(eta, 0.0);
                    let ey = Point2::new(0.0, eta);
                    (u.velocity(t, p + ex).x - u.velocity(t, p - ex).x
                        + u.velocity(t, p + ey).y
                        - u.velocity(t, p - ey).y)
                        / (2.0 * eta)
                }
            };
            worst = worst.max(-d);
        }
    }
    (worst, estimated)
}

/// Largest `k_max` such that every interval `I` with `|I| <= k_max` satisfies
/// `(q-1)/q ∫_I ‖(∇·u)⁻‖_{L^∞} dt <= (α-1)/α`. `q = ∞` is allowed.
pub fn compute_kmax(u: &dyn VelocityField, domain: &Domain, q: f64, alpha: f64, t_final: f64) -> Result<KMax> {
    if !(alpha > 1.0) {
        return invalid(format!("alpha must exceed 1, got {alpha}"));
    }
    if !(q > 1.0) {
        return invalid(format!("q must exceed 1, got {q}"));
    }
    if !(t_final > 0.0) {
        return invalid("horizon must be positive");
    }
    let profile: Vec<f64>;
    let mut estimated = false;
    if u.is_steady() {
        let (v, e) = sampled_negative_divergence(u, domain, 0.0);
        estimated = e;
        profile = vec![v];
    } else {
        let tau = t_final / TIME_SAMPLES as f64;
        profile = (0..TIME_SAMPLES)
            .map(|i| {
                let (v, e) = sampled_negative_divergence(u, domain, (i as f64 + 0.5) * tau);
                estimated |= e;
                v
            })
            .collect();
    }
    let value = kmax_from_profile(&profile, q, alpha, t_final);
    let tau = t_final / profile.len() as f64;
    Ok(KMax {
        value,
        compressibility: profile.iter().sum::<f64>() * tau,
        estimated,
    })
}

/// Sliding-window inversion for a piecewise-constant profile on a uniform
/// partition of `[0, T]`.
pub fn kmax_from_profile(profile: &[f64], q: f64, alpha: f64, t_final: f64) -> f64 {
    let weight = if q.is_infinite() { 1.0 } else { (q - 1.0) / q };
    let bound = (alpha - 1.0) / alpha;
    let m = profile.len();
    let tau = t_final / m as f64;
    let mut cum = vec![0.0; m + 1];
    for i in 0..m {
        cum[i + 1] = cum[i] + weight * profile[i] * tau;
    }
    let g = |s: f64| {
        let x = (s / tau).clamp(0.0, m as f64);
        let i = (x.floor() as usize).min(m - 1);
        cum[i] + (x - i as f64) * (cum[i + 1] - cum[i])
    };
    if cum[m] <= bound {
        return t_final;
    }
    let window = |len: f64| {
        let mut w: f64 = 0.0;
        for i in 0..=m {
            let grid = i as f64 * tau;
            for s in [grid, grid - len] {
                if s >= 0.0 && s + len <= t_final * (1.0 + 1e-15) {
                    w = w.max(g(s + len) - g(s));
                }
            }
        }
        w
    };
    let (mut lo, mut hi) = (0.0, t_final);
    // Bisection on the monotone window maximum.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if window(mid) <= bound {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * t_final {
            break;
        }
    }
    lo
}
