//! Implicit upwind finite-volume scheme and its runtime monitors.
//!
//! For every cell `K` and step `n` the scheme solves
//!
//! ```text
//! (θ_K^{n+1} - θ_K^n)/k + Σ_L |K|L|/|K| (u_KL^{n+} θ_K^{n+1} - u_KL^{n-} θ_L^{n+1})
//!                       + κ Σ_L |K|L|/|K| (θ_K^{n+1} - θ_L^{n+1})/d_KL = 0
//! ```
//!
//! with no flux through boundary faces.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{self, lq_norm, weighted_sum, CellField, FluxField};
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, BandedLu, CsrMatrix};
use crate::mesh::Mesh;

/// Cell counts above this use BiCGStab instead of the banded factorization.
pub const DIRECT_LIMIT: usize = 200_000;

/// Which time levels a [`Trajectory`] keeps in memory. The first and last
/// levels are always kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum Snapshots {
    #[default]
    All,
    /// Every `m`-th level.
    Stride(usize),
    /// Levels nearest to the given times.
    Times(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kappa: f64,
    pub k: f64,
    pub t_final: f64,
    /// Stability exponent.
    pub q: f64,
    /// Slack in the time-step restriction, `α > 1`.
    pub alpha: f64,
    /// Relative residual accepted from the linear solver.
    pub tol: f64,
    pub max_iter: usize,
    /// Skip the time-step restriction.
    pub force: bool,
    /// Exponents whose norms are tracked each step; `q` is always included.
    pub monitor_exponents: Vec<f64>,
    /// Exponent of the energy functional; defaults to `min(q, 2)`.
    pub r: Option<f64>,
    pub snapshots: Snapshots,
}

impl SchemeConfig {
    pub fn new(kappa: f64, k: f64, t_final: f64) -> Self {
        Self {
            kappa,
            k,
            t_final,
            q: 2.0,
            alpha: 2.0,
            tol: 1e-12,
            max_iter: 1000,
            force: false,
            monitor_exponents: Vec::new(),
            r: None,
            snapshots: Snapshots::All,
        }
    }

    pub fn n_steps(&self) -> Result<usize> {
        discretize::step_count(self.k, self.t_final)
    }

    pub fn energy_exponent(&self) -> f64 {
        self.r.unwrap_or(self.q.min(2.0))
    }

    fn exponents(&self) -> Vec<f64> {
        let mut e = vec![self.q];
        for &x in &self.monitor_exponents {
            if !e.contains(&x) {
                e.push(x);
            }
        }
        e
    }

    pub fn validate(&self) -> Result<usize> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return invalid(format!("kappa must be finite and nonnegative, got {}", self.kappa));
        }
        if !(self.q > 1.0) || self.monitor_exponents.iter().any(|&p| !(p >= 1.0)) {
            return invalid("stability exponents must exceed 1");
        }
        if !(self.alpha > 1.0) {
            return invalid(format!("alpha must exceed 1, got {}", self.alpha));
        }
        let r = self.energy_exponent();
        if !(r > 1.0 && r <= 2.0 && r <= self.q) {
            return invalid(format!("energy exponent r = {r} must lie in (1, min(q, 2)]"));
        }
        if !(self.tol > 0.0) {
            return invalid("solver tolerance must be positive");
        }
        self.n_steps()
    }
}

/// `A θ^{n+1} = θ^n / k` for one step.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub inv_k: f64,
    /// Time index `n` of the step.
    pub step: usize,
}

impl LinearSystem {
    pub fn rhs(&self, theta_n: &[f64]) -> Vec<f64> {
        theta_n.iter().map(|v| v * self.inv_k).collect()
    }

    /// Positive diagonal, non-positive off-diagonal, and `diag(|K|) A`
    /// column sums equal to `|K|/k`.
    pub fn check_m_matrix(&self, volumes: &[f64]) -> Result<()> {
        let n = self.matrix.dim();
        let mut col = vec![0.0; n];
        let mut scale = vec![0.0_f64; n];
        for i in 0..n {
            for (j, v) in self.matrix.row(i) {
                if i == j && !(v > 0.0) {
                    return invalid(format!("row {i}: diagonal {v} is not positive"));
                }
                if i != j && v > 0.0 {
                    return invalid(format!("entry ({i}, {j}) = {v} is positive"));
                }
                col[j] += volumes[i] * v;
                scale[j] = scale[j].max((volumes[i] * v).abs());
            }
        }
        for j in 0..n {
            let expected = volumes[j] * self.inv_k;
            if (col[j] - expected).abs() > 1e-11 * scale[j].max(expected) {
                return invalid(format!("column {j} sum {} differs from |K|/k = {expected}", col[j]));
            }
        }
        Ok(())
    }
}

fn upwind_rows(mesh: &Mesh, flux: &FluxField, kappa: f64, n: usize, split: bool) -> Vec<Vec<(usize, f64)>> {
    let slab = flux.slab(n);
    let inv_k = 1.0 / flux.time_step();
    mesh.cells()
        .par_iter()
        .map(|c| {
            let mut row = Vec::with_capacity(c.faces.len() + 1);
            let mut diag = inv_k;
            for nb in mesh.neighbors(c.id) {
                let Some(l) = nb.other else { continue };
                let u = nb.sign * slab[nb.face.id];
                let w = nb.face.area / c.volume;
                let dif = kappa / nb.face.d_kl;
                let (a_kk, a_kl) = if split {
                    // u (θ_K + θ_L)/2 + |u| (θ_K - θ_L)/2 + κ (θ_K - θ_L)/d
                    (w * (0.5 * u + 0.5 * u.abs() + dif), w * (0.5 * u - 0.5 * u.abs() - dif))
                } else {
                    (w * (u.max(0.0) + dif), -w * ((-u).max(0.0) + dif))
                };
                diag += a_kk;
                row.push((l, a_kl));
            }
            row.push((c.id, diag));
            row
        })
        .collect()
}

fn check_step(flux: &FluxField, n: usize) -> Result<()> {
    if n >= flux.n_steps() {
        return invalid(format!("time index {n} out of range 0..{}", flux.n_steps()));
    }
    Ok(())
}

/// Assembles the upwind system for step `n → n+1` from the split
/// `u^{±}` form and checks its M-matrix structure.
pub fn assemble_step(mesh: &Mesh, flux: &FluxField, cfg: &SchemeConfig, n: usize) -> Result<LinearSystem> {
    check_step(flux, n)?;
    let sys = LinearSystem {
        matrix: CsrMatrix::from_rows(upwind_rows(mesh, flux, cfg.kappa, n, false)),
        inv_k: 1.0 / flux.time_step(),
        step: n,
    };
    sys.check_m_matrix(&mesh.volumes())?;
    Ok(sys)
}

/// Same system assembled from the central-plus-`|u|` form.
pub fn assemble_step_centered(mesh: &Mesh, flux: &FluxField, cfg: &SchemeConfig, n: usize) -> Result<LinearSystem> {
    check_step(flux, n)?;
    Ok(LinearSystem {
        matrix: CsrMatrix::from_rows(upwind_rows(mesh, flux, cfg.kappa, n, true)),
        inv_k: 1.0 / flux.time_step(),
        step: n,
    })
}

enum Backend {
    Direct(BandedLu),
    Iterative,
}

/// Factored (or preconditioned) `diag(|K|) A`, reused while the matrix is
/// unchanged.
struct Prepared {
    scaled: CsrMatrix,
    backend: Backend,
}

impl Prepared {
    fn new(sys: &LinearSystem, volumes: &[f64]) -> Result<Self> {
        let scaled = sys.matrix.scale_rows(volumes);
        let n = scaled.dim();
        let backend = if n <= DIRECT_LIMIT {
            let natural: Vec<usize> = (0..n).collect();
            let rcm = scaled.rcm_ordering();
            let perm = if scaled.bandwidth(&rcm) < scaled.bandwidth(&natural) {
                rcm
            } else {
                natural
            };
            match BandedLu::factor(&scaled, perm) {
                Some(lu) => Backend::Direct(lu),
                None => Backend::Iterative,
            }
        } else {
            Backend::Iterative
        };
        Ok(Self { scaled, backend })
    }

    fn solve(&self, b: &[f64], guess: &[f64], cfg: &SchemeConfig, step: usize) -> Result<Vec<f64>> {
        let b_norm = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let target = cfg.tol * b_norm;
        match &self.backend {
            Backend::Direct(lu) => {
                let mut x = lu.solve(b);
                let mut res = linalg::residual_inf(&self.scaled, &x, b);
                let mut rounds = 0;
                while res > target && rounds < 3 {
                    let ax = self.scaled.mul_vec(&x);
                    let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
                    let dx = lu.solve(&r);
                    for (xi, d) in x.iter_mut().zip(&dx) {
                        *xi += d;
                    }
                    res = linalg::residual_inf(&self.scaled, &x, b);
                    rounds += 1;
                }
                if res > target || x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::SolverFailure {
                        step,
                        residual: res / b_norm.max(f64::MIN_POSITIVE),
                        iterations: rounds,
                    });
                }
                Ok(x)
            }
            Backend::Iterative => {
                let mut x = guess.to_vec();
                let s = linalg::bicgstab(&self.scaled, b, &mut x, cfg.tol, cfg.max_iter);
                if !s.converged {
                    return Err(Error::SolverFailure {
                        step,
                        residual: s.residual,
                        iterations: s.iterations,
                    });
                }
                Ok(x)
            }
        }
    }
}

/// One implicit step `θ^n ↦ θ^{n+1}`.
pub fn step(mesh: &Mesh, theta_n: &CellField, system: &LinearSystem, cfg: &SchemeConfig) -> Result<CellField> {
    theta_n.check_len(mesh)?;
    let vol = mesh.volumes();
    let prepared = Prepared::new(system, &vol)?;
    let b: Vec<f64> = system.rhs(&theta_n.values).iter().zip(&vol).map(|(v, w)| v * w).collect();
    let x = prepared.solve(&b, &theta_n.values, cfg, system.step)?;
    Ok(CellField::new(x, (system.step + 1) as f64 / system.inv_k))
}

/// Per-level monitor values. Increments refer to the step that produced
/// level `n` and are zero at `n = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub n: usize,
    pub t: f64,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    /// Norms for [`Trajectory::exponents`], in order.
    pub lq: Vec<f64>,
    /// `Σ_K |K| |θ_K^n - θ_K^{n-1}|`.
    pub bv_time: f64,
    /// `k Σ_K Σ_{L∼K} |K|L| |θ_K^n - θ_L^n|`.
    pub bv_space: f64,
    /// Time part of the energy functional.
    pub energy_time: f64,
    /// Advection and diffusion part of the energy functional.
    pub energy_space: f64,
}

/// Output of [`solve`]. Immutable once produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub k: f64,
    pub n_steps: usize,
    pub kappa: f64,
    pub exponents: Vec<f64>,
    pub r: f64,
    /// `k Σ_n max_K (∇·u)_K^{n,-}`, the logarithm of `Λ_{k,h}`.
    pub log_lambda: f64,
    /// Largest step satisfying the slab-wise restriction for `(q, α)`.
    pub k_max: f64,
    pub q: f64,
    pub alpha: f64,
    pub forced: bool,
    pub records: Vec<StepRecord>,
    snapshots: Vec<(usize, CellField)>,
}

impl Trajectory {
    pub fn t_final(&self) -> f64 {
        self.k * self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.k
    }

    pub fn snapshot(&self, n: usize) -> Option<&CellField> {
        self.snapshots
            .binary_search_by_key(&n, |s| s.0)
            .ok()
            .map(|i| &self.snapshots[i].1)
    }

    pub fn snapshots(&self) -> impl Iterator<Item = (usize, &CellField)> + '_ {
        self.snapshots.iter().map(|(n, f)| (*n, f))
    }

    pub fn initial(&self) -> &CellField {
        &self.snapshots[0].1
    }

    pub fn final_field(&self) -> &CellField {
        &self.snapshots.last().unwrap().1
    }

    fn level_of(&self, t: f64) -> Result<(usize, f64)> {
        let tf = self.t_final();
        if !(t >= 0.0 && t <= tf * (1.0 + 1e-14)) {
            return invalid(format!("time {t} outside [0, {tf}]"));
        }
        let x = t / self.k;
        let nearest = x.round();
        if (x - nearest).abs() <= 1e-9 {
            return Ok((nearest as usize, 0.0));
        }
        Ok((x.floor() as usize, x - x.floor()))
    }

    fn stored(&self, n: usize) -> Result<&CellField> {
        self.snapshot(n)
            .ok_or_else(|| Error::InvalidArgument(format!("level {n} was not kept; widen the snapshot policy")))
    }

    /// `θ_{k,h}(t) = θ^n` for `t ∈ [t^n, t^{n+1})`.
    pub fn field_at(&self, t: f64) -> Result<CellField> {
        let (n, _) = self.level_of(t)?;
        let mut f = self.stored(n.min(self.n_steps))?.clone();
        f.time = t;
        Ok(f)
    }

    /// Largest relative deviation of the mass from its initial value.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.records[0].mass;
        let scale = m0.abs().max(f64::MIN_POSITIVE);
        self.records
            .iter()
            .map(|r| (r.mass - m0).abs() / scale)
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.records.iter().map(|r| r.min).fold(f64::INFINITY, f64::min)
    }

    fn exponent_index(&self, q: f64) -> Option<usize> {
        self.exponents.iter().position(|&e| e == q)
    }

    /// Writes `n,t,cell_id,value` rows for every kept level.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        w.write_record(["n", "t", "cell_id", "value"])
            .map_err(|e| Error::io(path, e.into()))?;
        for (n, f) in &self.snapshots {
            let t = self.time(*n);
            for (i, v) in f.values.iter().enumerate() {
                w.write_record(&[n.to_string(), t.to_string(), i.to_string(), v.to_string()])
                    .map_err(|e| Error::io(path, e.into()))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Piecewise-linear interpolant between grid levels.
pub fn interpolant_at(traj: &Trajectory, t: f64) -> Result<CellField> {
    let (n, s) = traj.level_of(t)?;
    if s == 0.0 {
        let mut f = traj.stored(n)?.clone();
        f.time = t;
        return Ok(f);
    }
    let a = traj.stored(n)?;
    let b = traj.stored(n + 1)?;
    let values = a.values.iter().zip(&b.values).map(|(x, y)| (1.0 - s) * x + s * y).collect();
    Ok(CellField::new(values, t))
}

fn keep_levels(policy: &Snapshots, n_steps: usize, k: f64) -> Vec<bool> {
    let mut keep = vec![false; n_steps + 1];
    keep[0] = true;
    keep[n_steps] = true;
    match policy {
        Snapshots::All => keep.iter_mut().for_each(|b| *b = true),
        Snapshots::Stride(m) => {
            for n in (0..=n_steps).step_by((*m).max(1)) {
                keep[n] = true;
            }
        }
        Snapshots::Times(ts) => {
            for t in ts {
                let n = (t / k).round();
                if n >= 0.0 && (n as usize) <= n_steps {
                    keep[n as usize] = true;
                }
            }
        }
    }
    keep
}

/// `‖θ^{n+1} - θ^n‖`-type increments for the time part of the monitors.
fn time_increments(vol: &[f64], new: &[f64], old: &[f64], r: f64) -> (f64, f64) {
    let mut bv = 0.0;
    let mut en = 0.0;
    for ((w, a), b) in vol.iter().zip(new).zip(old) {
        let d = a - b;
        bv += w * d.abs();
        if d != 0.0 {
            let m = (0.5 * (a + b)).max(0.5 * d.abs());
            en += w * m.powf(r - 2.0) * d * d;
        }
    }
    (bv, en)
}

fn space_increments(mesh: &Mesh, slab: &[f64], theta: &[f64], kappa: f64, k: f64, r: f64) -> (f64, f64) {
    let mut bv = 0.0;
    let mut en = 0.0;
    for f in mesh.interior_faces() {
        let l = f.outer.unwrap();
        let (a, b) = (theta[f.inner], theta[l]);
        let d = a - b;
        if d == 0.0 {
            continue;
        }
        // Each face appears once from each side.
        bv += 2.0 * f.area * d.abs();
        let m = (0.5 * (a + b)).max(0.5 * d.abs());
        en += 2.0 * f.area * (slab[f.id].abs() + kappa / f.d_kl) * d * d * m.powf(r - 2.0);
    }
    (k * bv, k * en)
}

/// Largest step allowed by `(q-1)/q · k · max_K (∇·u)_K^{n,-} <= (α-1)/α`
/// over all slabs.
pub fn discrete_kmax(flux: &FluxField, mesh: &Mesh, q: f64, alpha: f64) -> f64 {
    let worst = discretize::discrete_negative_divergence(flux, mesh)
        .into_iter()
        .fold(0.0, f64::max);
    let weight = if q.is_infinite() { 1.0 } else { (q - 1.0) / q };
    if worst <= 0.0 {
        f64::INFINITY
    } else {
        (alpha - 1.0) / alpha / (weight * worst)
    }
}

/// Runs the scheme from `theta0` for all steps of `flux`.
pub fn solve(mesh: &Mesh, theta0: &CellField, flux: &FluxField, cfg: &SchemeConfig) -> Result<Trajectory> {
    let n_steps = cfg.validate()?;
    theta0.check_len(mesh)?;
    if n_steps != flux.n_steps() || (flux.time_step() - cfg.k).abs() > 1e-14 * cfg.k {
        return invalid(format!(
            "flux field has {} steps of {} but the configuration asks for {n_steps} steps of {}",
            flux.n_steps(),
            flux.time_step(),
            cfg.k
        ));
    }
    let k_max = discrete_kmax(flux, mesh, cfg.q, cfg.alpha);
    if cfg.k > k_max * (1.0 + 1e-12) && !cfg.force {
        return invalid(format!("time step {} exceeds k_max = {k_max}; pass force to override", cfg.k));
    }
    let vol = mesh.volumes();
    let exponents = cfg.exponents();
    let r = cfg.energy_exponent();
    let keep = keep_levels(&cfg.snapshots, n_steps, cfg.k);
    let neg_div = discretize::discrete_negative_divergence(flux, mesh);
    let log_lambda = if flux.is_steady() {
        cfg.k * n_steps as f64 * neg_div[0]
    } else {
        cfg.k * neg_div.iter().sum::<f64>()
    };

    let record = |n: usize, theta: &[f64], bv_time: f64, bv_space: f64, energy_time: f64, energy_space: f64| StepRecord {
        n,
        t: n as f64 * cfg.k,
        mass: weighted_sum(mesh, theta),
        min: theta.iter().copied().fold(f64::INFINITY, f64::min),
        max: theta.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        lq: exponents.iter().map(|&q| lq_norm(mesh, theta, q)).collect(),
        bv_time,
        bv_space,
        energy_time,
        energy_space,
    };

    let mut records = Vec::with_capacity(n_steps + 1);
    let mut snapshots = Vec::new();
    records.push(record(0, &theta0.values, 0.0, 0.0, 0.0, 0.0));
    snapshots.push((0, CellField::new(theta0.values.clone(), 0.0)));

    let mut theta = theta0.values.clone();
    let mut prepared: Option<Prepared> = None;
    for n in 0..n_steps {
        if prepared.is_none() || !flux.is_steady() {
            let sys = assemble_step(mesh, flux, cfg, n)?;
            prepared = Some(Prepared::new(&sys, &vol)?);
        }
        let b: Vec<f64> = theta.iter().zip(&vol).map(|(v, w)| v * w / cfg.k).collect();
        let next = prepared.as_ref().unwrap().solve(&b, &theta, cfg, n)?;
        let (bv_t, en_t) = time_increments(&vol, &next, &theta, r);
        let (bv_s, en_s) = space_increments(mesh, flux.slab(n), &next, cfg.kappa, cfg.k, r);
        theta = next;
        records.push(record(n + 1, &theta, bv_t, bv_s, en_t, en_s));
        if keep[n + 1] {
            snapshots.push((n + 1, CellField::new(theta.clone(), (n + 1) as f64 * cfg.k)));
        }
    }
    Ok(Trajectory {
        k: cfg.k,
        n_steps,
        kappa: cfg.kappa,
        exponents,
        r,
        log_lambda,
        k_max,
        q: cfg.q,
        alpha: cfg.alpha,
        forced: cfg.force,
        records,
        snapshots,
    })
}

/// `C_r = 2 max{2^{2-r}, r} / (r (r - 1))`.
pub fn energy_constant(r: f64) -> f64 {
    2.0 * (2f64.powf(2.0 - r)).max(r) / (r * (r - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub q: f64,
    pub alpha: f64,
    /// False for signed data or a step above `k_max`.
    pub applicable: bool,
    pub lambda: f64,
    pub initial_norm: f64,
    pub max_norm: f64,
    /// `Λ^{α(1-1/q)} ‖θ⁰‖_q`.
    pub bound: f64,
    pub pass: bool,
    pub norms_nonincreasing: bool,
    pub r: f64,
    pub c_r: f64,
    pub energy_time: f64,
    pub energy_space: f64,
    /// `C_r (1 + (r-1) log Λ) Λ^{α(r-1)} ‖θ⁰‖_r^r`.
    pub energy_bound: f64,
    pub energy_pass: bool,
}

/// Compares the tracked `L^q` norms against the a priori bound. The norm for
/// `q` and for the energy exponent `r` must have been tracked during the solve.
pub fn stability_monitor(traj: &Trajectory, q: f64, alpha: f64) -> Result<StabilityReport> {
    let qi = traj
        .exponent_index(q)
        .ok_or_else(|| Error::InvalidArgument(format!("norm for q = {q} was not tracked")))?;
    let norms: Vec<f64> = traj.records.iter().map(|r| r.lq[qi]).collect();
    let lambda = traj.log_lambda.exp();
    let initial_norm = norms[0];
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let bound = lambda.powf(alpha * (1.0 - 1.0 / q)) * initial_norm;
    let k_ok = traj.k <= discrete_kmax_from(traj, q, alpha) * (1.0 + 1e-12);
    let applicable = traj.records[0].min >= 0.0 && k_ok;
    let r = traj.r;
    let c_r = energy_constant(r);
    let r_norm0 = match traj.exponent_index(r) {
        Some(i) => traj.records[0].lq[i],
        None => f64::NAN,
    };
    let energy_time: f64 = traj.records.iter().map(|x| x.energy_time).sum();
    let energy_space: f64 = traj.records.iter().map(|x| x.energy_space).sum();
    let energy_bound = c_r * (1.0 + (r - 1.0) * traj.log_lambda) * lambda.powf(alpha * (r - 1.0)) * r_norm0.powf(r);
    Ok(StabilityReport {
        q,
        alpha,
        applicable,
        lambda,
        initial_norm,
        max_norm,
        bound,
        pass: max_norm <= bound + 1e-9,
        norms_nonincreasing: norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15),
        r,
        c_r,
        energy_time,
        energy_space,
        energy_bound,
        energy_pass: energy_time + energy_space <= energy_bound,
    })
}

fn discrete_kmax_from(traj: &Trajectory, q: f64, alpha: f64) -> f64 {
    // `traj.k_max` was computed for (traj.q, traj.alpha); rescale.
    let weight = |q: f64| (q - 1.0) / q;
    if traj.k_max.is_infinite() {
        return f64::INFINITY;
    }
    let worst = (traj.alpha - 1.0) / traj.alpha / (weight(traj.q) * traj.k_max);
    (alpha - 1.0) / alpha / (weight(q) * worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BvReport {
    pub s_time: f64,
    /// `S_time · √(k/T)`.
    pub s_time_scaled: f64,
    pub s_space: f64,
}

pub fn weak_bv_monitor(traj: &Trajectory) -> BvReport {
    let s_time: f64 = traj.records.iter().map(|r| r.bv_time).sum();
    let s_space: f64 = traj.records.iter().map(|r| r.bv_space).sum();
    BvReport {
        s_time,
        s_time_scaled: s_time * (traj.k / traj.t_final()).sqrt(),
        s_space,
    }
}

/// JSON monitor summary emitted by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorReport {
    pub mass: Vec<f64>,
    pub min: Vec<f64>,
    pub lq_norm: Vec<f64>,
    pub bv_time: f64,
    pub bv_space: f64,
    pub stability_pass: bool,
    pub stability: StabilityReport,
}

impl MonitorReport {
    pub fn new(traj: &Trajectory) -> Result<Self> {
        let stability = stability_monitor(traj, traj.q, traj.alpha)?;
        let bv = weak_bv_monitor(traj);
        Ok(Self {
            mass: traj.records.iter().map(|r| r.mass).collect(),
            min: traj.records.iter().map(|r| r.min).collect(),
            lq_norm: traj.records.iter().map(|r| r.lq[0]).collect(),
            bv_time: bv.s_time,
            bv_space: bv.s_space,
            stability_pass: stability.pass,
            stability,
        })
    }
}

/// `Θ_q(x, y) = (q-1)/q · (x^q - y^q)/(x^{q-1} - y^{q-1})`, extended by `x`
/// on the diagonal.
pub fn q_mean(x: f64, y: f64, q: f64) -> Result<f64> {
    if !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite() {
        return invalid(format!("q-mean needs positive arguments, got ({x}, {y})"));
    }
    if !(q > 1.0) || !q.is_finite() {
        return invalid(format!("q-mean needs q > 1, got {q}"));
    }
    let l = (y / x).ln();
    if l == 0.0 {
        return Ok(x);
    }
    // Written with expm1 to stay accurate when y is close to x.
    Ok(x * (q - 1.0) / q * (q * l).exp_m1() / ((q - 1.0) * l).exp_m1())
}

/// Slack `rhs - lhs` in `(x-y)² ((x+y)/2)^{r-2} <= (x-y)(x^{r-1} - y^{r-1})/(r-1)`.
pub fn elementary_inequality_slack(x: f64, y: f64, r: f64) -> f64 {
    let d = x - y;
    let lhs = d * d * (0.5 * (x + y)).powf(r - 2.0);
    // `x^{r-1} - y^{r-1}` via expm1: no cancellation when x ≈ y.
    let diff = y.powf(r - 1.0) * ((r - 1.0) * (d / y).ln_1p()).exp_m1();
    let rhs = d * diff / (r - 1.0);
    rhs - lhs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{discretize_velocity, FnVelocity};
    use crate::geometry::Point2;
    use crate::mesh::{build_cartesian_mesh, Domain};

    fn grid(nx: usize, ny: usize) -> Mesh {
        build_cartesian_mesh(&Domain::unit_square(), nx, ny).unwrap()
    }

    #[test]
    fn zero_data_gives_scaled_identity() {
        let m = grid(3, 3);
        let cfg = SchemeConfig::new(0.0, 0.25, 1.0);
        let fl = FluxField::zero(&m, 0.25, 4);
        let s = assemble_step(&m, &fl, &cfg, 0).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(s.matrix.get(i, j), if i == j { 4.0 } else { 0.0 });
            }
        }
        let theta = CellField::new((0..9).map(|i| i as f64).collect(), 0.0);
        let next = step(&m, &theta, &s, &cfg).unwrap();
        assert_eq!(next.values, theta.values);
        assert!(assemble_step(&m, &fl, &cfg, 4).is_err());
    }

    #[test]
    fn two_cells_pure_diffusion() {
        let m = grid(2, 1);
        let (kappa, k) = (0.3, 0.1);
        let cfg = SchemeConfig::new(kappa, k, 1.0);
        let fl = FluxField::zero(&m, k, 10);
        let s = assemble_step(&m, &fl, &cfg, 0).unwrap();
        // |f| = 1, |K| = 1/2, d = 1/2.
        let c = kappa * 1.0 / (0.5 * 0.5);
        assert!((s.matrix.get(0, 0) - (1.0 / k + c)).abs() < 1e-13);
        assert!((s.matrix.get(0, 1) + c).abs() < 1e-13);
        assert_eq!(s.matrix.get(1, 0), s.matrix.get(0, 1));
        let theta = CellField::new(vec![1.0, 0.0], 0.0);
        let next = step(&m, &theta, &s, &cfg).unwrap();
        let factor = 1.0 / (1.0 + 2.0 * kappa * k * 1.0 / (0.5 * 0.5));
        assert!(((next.values[0] - next.values[1]) - factor).abs() < 1e-14);
        assert!((next.values[0] + next.values[1] - 1.0).abs() < 1e-14);
        let flat = step(&m, &CellField::new(vec![2.0, 2.0], 0.0), &s, &cfg).unwrap();
        assert!(flat.values.iter().all(|v| (v - 2.0).abs() < 1e-14));
    }

    fn rotation_flux(m: &Mesh, k: f64, t: f64) -> FluxField {
        let rot = FnVelocity::new(|_, p: Point2| Point2::new(-(p.y - 0.5), p.x - 0.5), 1.0).steady();
        discretize_velocity(&rot, m, k, t, 2, 1).unwrap()
    }

    #[test]
    fn rotation_matrix_is_m_matrix_and_forms_agree() {
        let m = grid(8, 8);
        let cfg = SchemeConfig::new(0.01, 0.05, 0.5);
        let fl = rotation_flux(&m, 0.05, 0.5);
        let a = assemble_step(&m, &fl, &cfg, 0).unwrap();
        let b = assemble_step_centered(&m, &fl, &cfg, 0).unwrap();
        for i in 0..64 {
            for (j, v) in a.matrix.row(i) {
                if i == j {
                    assert!(v > 0.0);
                } else {
                    assert!(v <= 0.0);
                }
            }
        }
        assert!(a.matrix.max_abs_diff(&b.matrix) <= 1e-14);
    }

    #[test]
    fn solve_conserves_and_stays_positive() {
        let m = grid(12, 12);
        let mut cfg = SchemeConfig::new(0.01, 0.05, 1.0);
        cfg.monitor_exponents = vec![1.5];
        let fl = rotation_flux(&m, 0.05, 1.0);
        let theta0 = CellField::new(
            m.cells().iter().map(|c| if c.center.x < 0.4 { 1.0 } else { 0.0 }).collect(),
            0.0,
        );
        let tr = solve(&m, &theta0, &fl, &cfg).unwrap();
        assert_eq!(tr.records.len(), 21);
        assert!(tr.mass_drift() <= 1e-12);
        assert!(tr.min_value() >= -1e-12);
        let st = stability_monitor(&tr, 2.0, 2.0).unwrap();
        assert!(st.applicable && st.pass && st.norms_nonincreasing);
        assert!(stability_monitor(&tr, 3.0, 2.0).is_err());
        let mid = interpolant_at(&tr, 0.025).unwrap();
        let a = tr.snapshot(0).unwrap();
        let b = tr.snapshot(1).unwrap();
        for i in 0..m.n_cells() {
            assert!((mid.values[i] - 0.5 * (a.values[i] + b.values[i])).abs() < 1e-15);
        }
        assert_eq!(interpolant_at(&tr, 0.1).unwrap().values, tr.snapshot(2).unwrap().values);
        assert!(interpolant_at(&tr, 1.5).is_err());
    }

    #[test]
    fn constant_datum_has_zero_bv() {
        let m = grid(4, 4);
        let cfg = SchemeConfig::new(0.0, 0.1, 0.5);
        let fl = FluxField::zero(&m, 0.1, 5);
        let tr = solve(&m, &CellField::constant(16, 3.0), &fl, &cfg).unwrap();
        let bv = weak_bv_monitor(&tr);
        assert_eq!(bv.s_time, 0.0);
        assert_eq!(bv.s_space, 0.0);
    }

    #[test]
    fn step_above_kmax_needs_force() {
        let m = grid(6, 6);
        let c = 2.0;
        let u = FnVelocity::new(move |_, p: Point2| (p - Point2::new(0.5, 0.5)) * (-c / 2.0), c).steady();
        // Interior cells see divergence -c, so k_max = 1/c for q = α = 2.
        let fl = discretize_velocity(&u, &m, 1.0, 1.0, 2, 1).unwrap();
        assert!((discrete_kmax(&fl, &m, 2.0, 2.0) - 0.5).abs() < 1e-12);
        let mut cfg = SchemeConfig::new(0.01, 1.0, 1.0);
        assert!(solve(&m, &CellField::constant(36, 1.0), &fl, &cfg).is_err());
        cfg.force = true;
        let tr = solve(&m, &CellField::constant(36, 1.0), &fl, &cfg).unwrap();
        assert!(tr.forced);
    }

    #[test]
    fn q_mean_basics() {
        assert!((q_mean(1.0, 3.0, 2.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(q_mean(2.5, 2.5, 1.7).unwrap(), 2.5);
        let near = q_mean(1.0, 1.0 + 1e-12, 3.0).unwrap();
        assert!((near - 1.0).abs() < 1e-11);
        assert!(q_mean(0.0, 1.0, 2.0).is_err());
        assert!(q_mean(1.0, 2.0, 1.0).is_err());
        // Direct formula away from the diagonal.
        let (x, y, q) = (0.7_f64, 2.3_f64, 3.5_f64);
        let direct = (q - 1.0) / q * (x.powf(q) - y.powf(q)) / (x.powf(q - 1.0) - y.powf(q - 1.0));
        assert!((q_mean(x, y, q).unwrap() - direct).abs() < 1e-14 * direct);
    }

    #[test]
    fn energy_constant_values() {
        assert!((energy_constant(2.0) - 2.0).abs() < 1e-15);
        assert!((energy_constant(1.5) - 2.0 * 2f64.sqrt().max(1.5) / 0.75).abs() < 1e-14);
    }
}
