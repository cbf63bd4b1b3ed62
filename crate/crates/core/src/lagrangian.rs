//! Reflected Euler–Maruyama particles for `dX = u dt + √(2κ) dB − n dL`.
//!
//! Randomness is keyed by `(seed, particle, step)`: every particle owns a
//! ChaCha stream and every step a fixed window in it, so results do not
//! depend on scheduling.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::discretize::{step_count, CellField, VelocityField};
use crate::error::{invalid, Error, Result};
use crate::geometry::{self, Point2};
use crate::mesh::{Domain, Mesh};

/// Reflections allowed per particle and step before giving up.
pub const MAX_REFLECTIONS: usize = 8;

/// 32-bit words reserved per step in a particle's stream.
const WORDS_PER_SLOT: u128 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub positions: Vec<Point2>,
    /// Accumulated boundary local time per particle.
    pub local_time: Vec<f64>,
    pub seed: u64,
    pub kappa: f64,
    pub time: f64,
    pub steps: u64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Uniforms in `[0, 1)` from slot `slot` of the particle's stream.
struct Draws(ChaCha8Rng);

impl Draws {
    fn new(base: &ChaCha8Rng, particle: u64, slot: u64) -> Self {
        let mut rng = base.clone();
        rng.set_stream(particle);
        rng.set_word_pos(slot as u128 * WORDS_PER_SLOT);
        Self(rng)
    }

    fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Two independent standard normals by Box–Muller.
    fn normals(&mut self) -> (f64, f64) {
        let r = (-2.0 * (1.0 - self.uniform()).ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * self.uniform()).sin_cos();
        (r * c, r * s)
    }
}

/// One step of size `dt` for every particle; failures name the particle.
pub fn em_step(ens: &mut Ensemble, u: &dyn VelocityField, domain: &Domain, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return invalid(format!("time step must be positive, got {dt}"));
    }
    let base = ChaCha8Rng::seed_from_u64(ens.seed);
    let (t, kappa, slot) = (ens.time, ens.kappa, ens.steps + 1);
    let edges: Vec<(Point2, Point2)> = domain.edges().map(|(a, _, n)| (a, n)).collect();
    let sigma = (2.0 * kappa * dt).sqrt();
    ens.positions
        .par_iter_mut()
        .zip(ens.local_time.par_iter_mut())
        .enumerate()
        .try_for_each(|(p, (x, l))| {
            let v = u.velocity(t, *x);
            let (g1, g2) = if kappa > 0.0 {
                Draws::new(&base, p as u64, slot).normals()
            } else {
                (0.0, 0.0)
            };
            let mut y = *x + v * dt + Point2::new(g1, g2) * sigma;
            let scale = (2.0 * kappa * dt + v.norm() * dt).sqrt();
            let mut pushed = 0.0;
            let mut bounces = 0;
            loop {
                // Deepest violated edge first; corners take several rounds.
                let worst = edges
                    .iter()
                    .map(|&(a, n)| ((y - a).dot(n), n))
                    .filter(|e| e.0 > 0.0)
                    .max_by(|a, b| a.0.total_cmp(&b.0));
                let Some((depth, n)) = worst else { break };
                if bounces == MAX_REFLECTIONS {
                    return Err(Error::StepFailure(format!(
                        "particle {p} still outside after {MAX_REFLECTIONS} reflections at t = {t}; use a smaller dt"
                    )));
                }
                y = y - n * (2.0 * depth);
                if scale > 0.0 {
                    pushed += depth / scale;
                }
                bounces += 1;
            }
            *x = y;
            *l += pushed.min(dt);
            Ok(())
        })?;
    ens.time += dt;
    ens.steps += 1;
    Ok(())
}

/// Draws `n_p` particles from the density `theta0`: a cell with probability
/// proportional to its mass, then a uniform point inside it.
pub fn sample_initial(mesh: &Mesh, theta0: &CellField, n_p: usize, seed: u64, kappa: f64) -> Result<Ensemble> {
    theta0.check_len(mesh)?;
    if n_p == 0 {
        return invalid("need at least one particle");
    }
    if theta0.values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return invalid("particle sampling needs a nonnegative datum");
    }
    let mut cumulative = Vec::with_capacity(mesh.n_cells());
    let mut acc = 0.0;
    for (c, &v) in mesh.cells().iter().zip(&theta0.values) {
        if v > 0.0 && c.vertices.len() < 3 {
            return invalid(format!("cell {} has no geometry to sample from", c.id));
        }
        acc += v * c.volume;
        cumulative.push(acc);
    }
    if acc <= 0.0 {
        return invalid("datum has zero mass");
    }
    let base = ChaCha8Rng::seed_from_u64(seed);
    let positions = (0..n_p)
        .into_par_iter()
        .map(|p| {
            let mut d = Draws::new(&base, p as u64, 0);
            let target = d.uniform() * acc;
            let k = cumulative.partition_point(|&c| c <= target).min(mesh.n_cells() - 1);
            uniform_in(&mesh.cells()[k].vertices, &mut d)
        })
        .collect();
    Ok(Ensemble {
        positions,
        local_time: vec![0.0; n_p],
        seed,
        kappa,
        time: 0.0,
        steps: 0,
    })
}

/// Uniform point in a convex polygon via its centroid fan.
fn uniform_in(poly: &[Point2], d: &mut Draws) -> Point2 {
    let c = geometry::centroid(poly);
    let n = poly.len();
    let areas: Vec<f64> = (0..n)
        .map(|i| (poly[i] - c).cross(poly[(i + 1) % n] - c).abs() / 2.0)
        .collect();
    let total: f64 = areas.iter().sum();
    let mut pick = d.uniform() * total;
    let mut i = 0;
    while i + 1 < n && pick >= areas[i] {
        pick -= areas[i];
        i += 1;
    }
    let (mut s, mut r) = (d.uniform(), d.uniform());
    if s + r > 1.0 {
        (s, r) = (1.0 - s, 1.0 - r);
    }
    c + (poly[i] - c) * s + (poly[(i + 1) % n] - c) * r
}

/// Samples `theta0` and runs `T/dt` steps, calling `observe` after each.
#[allow(clippy::too_many_arguments)]
pub fn simulate_observed(
    mesh: &Mesh,
    theta0: &CellField,
    u: &dyn VelocityField,
    kappa: f64,
    t_final: f64,
    dt: f64,
    n_p: usize,
    seed: u64,
    mut observe: impl FnMut(&Ensemble),
) -> Result<Ensemble> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return invalid(format!("diffusion must be nonnegative, got {kappa}"));
    }
    let domain = mesh
        .domain()
        .ok_or_else(|| Error::InvalidArgument("particles need a mesh with a known domain".into()))?;
    let steps = step_count(dt, t_final)?;
    let mut ens = sample_initial(mesh, theta0, n_p, seed, kappa)?;
    for _ in 0..steps {
        em_step(&mut ens, u, domain, dt)?;
        observe(&ens);
    }
    Ok(ens)
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    mesh: &Mesh,
    theta0: &CellField,
    u: &dyn VelocityField,
    kappa: f64,
    t_final: f64,
    dt: f64,
    n_p: usize,
    seed: u64,
) -> Result<Ensemble> {
    simulate_observed(mesh, theta0, u, kappa, t_final, dt, n_p, seed, |_| {})
}

/// Cell densities of the ensemble carrying `total_mass`.
pub fn histogram(ens: &Ensemble, mesh: &Mesh, total_mass: f64) -> Result<CellField> {
    if ens.is_empty() {
        return invalid("empty ensemble");
    }
    let cells: Vec<usize> = ens
        .positions
        .par_iter()
        .map(|&x| {
            mesh.locate(x).unwrap_or_else(|| {
                // Rounding can leave a reflected particle a hair outside.
                mesh.cells()
                    .iter()
                    .min_by(|a, b| a.center.dist2(x).total_cmp(&b.center.dist2(x)))
                    .map_or(0, |c| c.id)
            })
        })
        .collect();
    let mut counts = vec![0u64; mesh.n_cells()];
    for c in cells {
        counts[c] += 1;
    }
    let per = total_mass / ens.len() as f64;
    let values = counts
        .iter()
        .zip(mesh.cells())
        .map(|(&n, c)| n as f64 * per / c.volume)
        .collect();
    Ok(CellField::new(values, ens.time))
}
