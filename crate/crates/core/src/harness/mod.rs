//! Test-case catalog, refinement ladders and their reports.

mod cases;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cases::{
    builtin_cases, find_case, initial_field, reference_solution, CaseVelocity, DatumSpec, Reference, ReferenceKind,
    Regularity, TestCase, VelocitySpec, QUAD_ORDER,
};

use crate::discretize;
use crate::error::{invalid, Error, Result};
use crate::lagrangian;
use crate::mesh::{build_cartesian_mesh, Mesh};
use crate::scheme::{self, SchemeConfig, Snapshots, Trajectory};
use crate::transport::kr_signed;

/// Environment variable capping the worker threads.
pub const THREADS_VAR: &str = "FVKR_THREADS";

/// A rayon pool sized by `FVKR_THREADS`, or `None` when it is unset.
pub fn thread_pool_from_env() -> Result<Option<rayon::ThreadPool>> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_VAR} must be positive")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(e.to_string()))
}

/// How the time step follows the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Coupling {
    /// `k = c h²`, rounded so that `T / (4k)` is an integer.
    H2 { c: f64 },
    /// The same `k` on every level.
    FixedK { k: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaPolicy {
    /// `δ = h + √k` of the finest level, shared by all levels.
    Fixed,
    /// `δ = h_ℓ + √k_ℓ` per level.
    Matched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    pub levels: usize,
    /// Cells per side on level 0.
    pub n0: usize,
    pub coupling: Coupling,
    pub delta: DeltaPolicy,
    /// Atoms per cell in the distance evaluation (1, 4 or 9).
    pub points_per_cell: usize,
    pub q: f64,
    pub alpha: f64,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            n0: 16,
            coupling: Coupling::H2 { c: 1.0 },
            delta: DeltaPolicy::Fixed,
            points_per_cell: 1,
            q: 2.0,
            alpha: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub level: usize,
    pub h: f64,
    pub k: f64,
    pub delta: f64,
    /// Largest distance over the sampled times.
    pub error: f64,
    pub runtime_s: f64,
}

/// Least-squares line through `(ln x, ln error)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderResult {
    pub case: String,
    pub kappa: f64,
    pub rows: Vec<LadderRow>,
    /// Slope against `h` (space ladders).
    pub rate_h: Option<Fit>,
    /// Slope against `k` (time ladders).
    pub rate_k: Option<Fit>,
}

impl LadderResult {
    pub fn fit(&self) -> Option<Fit> {
        self.rate_h.or(self.rate_k)
    }
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<Fit> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("a fit needs at least two points");
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return invalid("log-log fit needs positive finite values");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("all abscissae coincide");
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(Fit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// The five sampled times `0, T/4, T/2, 3T/4, T`.
pub fn sample_times(t_final: f64) -> [f64; 5] {
    [0.0, 0.25, 0.5, 0.75, 1.0].map(|s| s * t_final)
}

/// Step count for `k ≈ c h²`, a positive multiple of four.
fn steps_for(t_final: f64, h: f64, coupling: Coupling) -> Result<usize> {
    let raw = match coupling {
        Coupling::H2 { c } => {
            if !(c > 0.0) {
                return Err(Error::Config(format!("coupling constant must be positive, got {c}")));
            }
            t_final / (c * h * h)
        }
        Coupling::FixedK { k } => {
            if !(k > 0.0) {
                return Err(Error::Config(format!("time step must be positive, got {k}")));
            }
            t_final / k
        }
    };
    Ok(4 * ((raw / 4.0 - 1e-9).ceil() as usize).max(1))
}

/// One solved level of a ladder.
pub struct Level {
    pub mesh: Mesh,
    pub h: f64,
    pub k: f64,
    pub trajectory: Trajectory,
}

/// Solves `case` on an `n × n` grid with `steps` steps, keeping the sampled times.
pub fn solve_level(case: &TestCase, n: usize, steps: usize, q: f64, alpha: f64) -> Result<Level> {
    case.validate()?;
    let mesh = build_cartesian_mesh(&case.domain, n, n)?;
    let g = *mesh.grid().expect("Cartesian mesh");
    let h = g.dx.max(g.dy);
    let k = case.t_final / steps as f64;
    let theta0 = initial_field(case, &mesh)?;
    let flux = discretize::discretize_velocity(&case.velocity_field(), &mesh, k, case.t_final, 2, 1)?;
    let k_max = scheme::discrete_kmax(&flux, &mesh, q, alpha);
    if k > k_max {
        return Err(Error::Config(format!(
            "k = {k} exceeds k_max = {k_max} on the {n}x{n} grid"
        )));
    }
    let mut cfg = SchemeConfig::new(case.kappa, k, case.t_final);
    cfg.q = q;
    cfg.alpha = alpha;
    cfg.snapshots = Snapshots::Times(sample_times(case.t_final).to_vec());
    let trajectory = scheme::solve(&mesh, &theta0, &flux, &cfg)?;
    Ok(Level { mesh, h, k, trajectory })
}

/// `max_t D_δ(reference(t), θ_{k,h}(t))` over the sampled times.
pub fn level_error(case: &TestCase, level: &Level, delta: f64, points_per_cell: usize) -> Result<f64> {
    let times = sample_times(case.t_final);
    let reference = Reference::build(case, &level.mesh, level.k, &times)?;
    let mut worst: f64 = 0.0;
    for &t in &times {
        let r = reference.at(t)?;
        let f = level.trajectory.field_at(t)?;
        worst = worst.max(kr_signed(&level.mesh, &r, &f, delta, points_per_cell)?.distance);
    }
    Ok(worst)
}

fn run_levels(case: &TestCase, plan: &[(usize, usize)], cfg: &LadderConfig) -> Result<Vec<LadderRow>> {
    if plan.len() < 3 {
        return Err(Error::Config(format!("a ladder needs at least 3 levels, got {}", plan.len())));
    }
    case.validate()?;
    let hk: Vec<(f64, f64)> = plan
        .iter()
        .map(|&(n, s)| {
            let (lo, hi) = case.domain.bbox();
            ((hi.x - lo.x).max(hi.y - lo.y) / n as f64, case.t_final / s as f64)
        })
        .collect();
    let finest = hk.iter().map(|(h, k)| h + k.sqrt()).fold(f64::INFINITY, f64::min);
    let mut rows = plan
        .par_iter()
        .zip(&hk)
        .enumerate()
        .map(|(level, (&(n, steps), &(h, k)))| {
            let start = Instant::now();
            let delta = match cfg.delta {
                DeltaPolicy::Fixed => finest,
                DeltaPolicy::Matched => h + k.sqrt(),
            };
            let lv = solve_level(case, n, steps, cfg.q, cfg.alpha).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("level {level}: {m}")),
                e => e,
            })?;
            let error = level_error(case, &lv, delta, cfg.points_per_cell)?;
            Ok(LadderRow {
                level,
                h: lv.h,
                k: lv.k,
                delta,
                error,
                runtime_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.level);
    Ok(rows)
}

/// Space ladder: `h_ℓ = h_0 / 2^ℓ` with `k` coupled by `cfg.coupling`.
pub fn run_ladder(case: &TestCase, cfg: &LadderConfig) -> Result<LadderResult> {
    let plan = (0..cfg.levels)
        .map(|l| {
            let n = cfg.n0 << l;
            let h = case_extent(case) / n as f64;
            Ok((n, steps_for(case.t_final, h, cfg.coupling)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = run_levels(case, &plan, cfg)?;
    let fit = loglog_fit(
        &rows.iter().map(|r| r.h).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.error).collect::<Vec<_>>(),
    )?;
    Ok(LadderResult {
        case: case.name.clone(),
        kappa: case.kappa,
        rows,
        rate_h: Some(fit),
        rate_k: None,
    })
}

/// Time ladder on a fixed `n × n` grid, starting from `steps0` steps and
/// doubling per level. `cfg.coupling` is ignored.
pub fn run_time_ladder(case: &TestCase, n: usize, steps0: usize, cfg: &LadderConfig) -> Result<LadderResult> {
    if steps0 == 0 || !steps0.is_multiple_of(4) {
        return Err(Error::Config(format!("initial step count must be a positive multiple of 4, got {steps0}")));
    }
    let plan: Vec<(usize, usize)> = (0..cfg.levels).map(|l| (n, steps0 << l)).collect();
    let rows = run_levels(case, &plan, cfg)?;
    let fit = loglog_fit(
        &rows.iter().map(|r| r.k).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.error).collect::<Vec<_>>(),
    )?;
    Ok(LadderResult {
        case: case.name.clone(),
        kappa: case.kappa,
        rows,
        rate_h: None,
        rate_k: Some(fit),
    })
}

fn case_extent(case: &TestCase) -> f64 {
    let (lo, hi) = case.domain.bbox();
    (hi.x - lo.x).max(hi.y - lo.y)
}

/// Particle histograms against the scheme at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub n: usize,
    pub h: f64,
    pub k: f64,
    pub delta: f64,
    pub particles: Vec<usize>,
    /// `D_δ(histogram, θ_{k,h}(T))` per ensemble size.
    pub distances: Vec<f64>,
    /// The scheme's own error at this level with the same `δ`.
    pub scheme_error: f64,
}

/// Compares seeded particle ensembles with the scheme at time `T` on an
/// `n × n` grid with `steps` steps and `δ = h + √k`.
pub fn lagrangian_crosscheck(
    case: &TestCase,
    n: usize,
    steps: usize,
    particles: &[usize],
    dt: f64,
    seed: u64,
) -> Result<CrossCheck> {
    let lv = solve_level(case, n, steps, 2.0, 2.0)?;
    let delta = lv.h + lv.k.sqrt();
    let scheme_error = level_error(case, &lv, delta, 1)?;
    let fv = lv.trajectory.final_field();
    let theta0 = lv.trajectory.initial();
    let mass = theta0.mass(&lv.mesh);
    let u = case.velocity_field();
    let distances = particles
        .iter()
        .map(|&np| {
            let ens = lagrangian::simulate(&lv.mesh, theta0, &u, case.kappa, case.t_final, dt, np, seed)?;
            let hist = lagrangian::histogram(&ens, &lv.mesh, mass)?;
            Ok(kr_signed(&lv.mesh, &hist, fv, delta, 1)?.distance)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossCheck {
        n,
        h: lv.h,
        k: lv.k,
        delta,
        particles: particles.to_vec(),
        distances,
        scheme_error,
    })
}

/// Writes `ladder.csv` and `ladder.json` into `dir` and returns their paths.
pub fn emit_report(result: &LadderResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if result.rows.is_empty() {
        return invalid("empty ladder");
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("ladder.csv");
    let json_path = dir.join("ladder.json");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::io(&csv_path, e.into()))?;
    for r in &result.rows {
        w.serialize(r).map_err(|e| Error::io(&csv_path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json = serde_json::to_string_pretty(result).expect("ladder serializes");
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

/// Rows of a `ladder.csv`.
pub fn read_ladder_csv(path: &Path) -> Result<Vec<LadderRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::parse(path, e.to_string())))
        .collect()
}
