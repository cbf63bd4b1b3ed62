use std::f64::consts::PI;

use fvkr::discretize::{discretize_velocity, CellField, FluxField, FnVelocity};
use fvkr::geometry::Point2;
use fvkr::mesh::{build_cartesian_mesh, build_voronoi_mesh, Domain, Mesh};
use fvkr::scheme::{
    assemble_step, assemble_step_centered, discrete_kmax, elementary_inequality_slack, q_mean, solve,
    stability_monitor, SchemeConfig,
};
use proptest::prelude::*;

fn mesh() -> impl Strategy<Value = Mesh> {
    prop_oneof![
        (2usize..10, 2usize..10).prop_map(|(nx, ny)| build_cartesian_mesh(&Domain::unit_square(), nx, ny).unwrap()),
        prop::collection::vec((0.02..0.98f64, 0.02..0.98f64), 4..30).prop_filter_map("degenerate seeds", |s| {
            let pts: Vec<Point2> = s.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
            build_voronoi_mesh(&pts, &Domain::unit_square()).ok()
        }),
    ]
}

/// A mix of rotation, compression and time modulation; compressible when
/// `s != 0`.
#[derive(Debug, Clone, Copy)]
struct Flow {
    omega: f64,
    s: f64,
    w: f64,
    steady: bool,
}

fn flow() -> impl Strategy<Value = Flow> {
    (-4.0..4.0f64, -2.0..2.0f64, 0.0..6.0f64, any::<bool>()).prop_map(|(omega, s, w, steady)| Flow { omega, s, w, steady })
}

fn flux_for(m: &Mesh, f: Flow, k: f64, t_final: f64) -> FluxField {
    let Flow { omega, s, w, steady } = f;
    let v = move |t: f64, x: Point2| {
        let g = if steady { 1.0 } else { 1.0 + 0.5 * (w * t).sin() };
        let r = x - Point2::new(0.5, 0.5);
        Point2::new(-omega * r.y + s * (PI * x.x).sin(), omega * r.x + s * (PI * x.y).sin()) * g
    };
    let mut u = FnVelocity::new(v, 1.5 * (omega.abs() + 2.0 * s.abs()) + 1e-9);
    if steady {
        u = u.steady();
    }
    discretize_velocity(&u, m, k, t_final, 2, 2).unwrap()
}

/// Steps for which `k = T/N` respects the restriction for `(q, α)`.
fn admissible_steps(m: &Mesh, f: Flow, t_final: f64, q: f64, alpha: f64) -> usize {
    let mut n = 1;
    loop {
        let k = t_final / n as f64;
        if k <= discrete_kmax(&flux_for(m, f, k, t_final), m, q, alpha) || n > 400 {
            return n;
        }
        n = (n * 2).max((t_final / discrete_kmax(&flux_for(m, f, k, t_final), m, q, alpha)).ceil() as usize);
    }
}

fn nonneg(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..10.0f64], n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conservation_positivity_and_comparison(
        (m, theta, extra) in mesh().prop_flat_map(|m| { let n = m.n_cells(); (Just(m), nonneg(n), nonneg(n)) }),
        f in flow(), kappa in prop_oneof![Just(0.0), 1e-4..0.1f64],
    ) {
        let t_final = 0.5;
        let steps = admissible_steps(&m, f, t_final, 2.0, 2.0);
        let k = t_final / steps as f64;
        let flux = flux_for(&m, f, k, t_final);
        let cfg = SchemeConfig::new(kappa, k, t_final);
        let theta0 = CellField::new(theta, 0.0);
        let phi0 = CellField::new(theta0.values.iter().zip(&extra).map(|(a, b)| a + b).collect(), 0.0);
        let a = solve(&m, &theta0, &flux, &cfg).unwrap();
        let b = solve(&m, &phi0, &flux, &cfg).unwrap();
        let scale = phi0.max().max(1.0);
        for (traj, init) in [(&a, &theta0), (&b, &phi0)] {
            let mass0 = init.mass(&m);
            for r in &traj.records {
                prop_assert!((r.mass - mass0).abs() <= 1e-10 * mass0.max(1e-300) + 1e-14);
                prop_assert!(r.min >= -1e-11 * scale, "min {}", r.min);
            }
        }
        for ((_, x), (_, y)) in a.snapshots().zip(b.snapshots()) {
            for (u, v) in x.values.iter().zip(&y.values) {
                prop_assert!(u <= &(v + 1e-11 * scale));
            }
        }
    }

    #[test]
    fn stability_bound_holds_below_kmax(
        (m, theta) in mesh().prop_flat_map(|m| { let n = m.n_cells(); (Just(m), nonneg(n)) }),
        f in flow(), kappa in 0.0..0.05f64, q in prop_oneof![Just(1.5), Just(2.0), Just(3.0)], alpha in 1.2..4.0f64,
    ) {
        prop_assume!(theta.iter().any(|&v| v > 0.0));
        let t_final = 0.5;
        let steps = admissible_steps(&m, f, t_final, q, alpha);
        let k = t_final / steps as f64;
        let flux = flux_for(&m, f, k, t_final);
        let mut cfg = SchemeConfig::new(kappa, k, t_final);
        cfg.q = q;
        cfg.alpha = alpha;
        let traj = solve(&m, &CellField::new(theta, 0.0), &flux, &cfg).unwrap();
        let r = stability_monitor(&traj, q, alpha).unwrap();
        prop_assert!(r.applicable);
        prop_assert!(r.pass, "{} > {}", r.max_norm, r.bound);
    }

    #[test]
    fn assembled_systems_are_m_matrices_and_forms_agree(
        m in mesh(), f in flow(), kappa in prop_oneof![Just(0.0), 1e-4..1.0f64], steps in 1usize..6,
    ) {
        let t_final = 1.0;
        let k = t_final / steps as f64;
        let flux = flux_for(&m, f, k, t_final);
        let mut cfg = SchemeConfig::new(kappa, k, t_final);
        cfg.force = true;
        let vols = m.volumes();
        for n in 0..steps {
            let up = assemble_step(&m, &flux, &cfg, n).unwrap();
            let alt = assemble_step_centered(&m, &flux, &cfg, n).unwrap();
            up.check_m_matrix(&vols).unwrap();
            let scale = (0..m.n_cells()).map(|i| up.matrix.get(i, i)).fold(1.0, f64::max);
            prop_assert!(up.matrix.max_abs_diff(&alt.matrix) <= 1e-14 * scale);
        }
    }
}

fn sweep(seed: u64, n: usize, mut check: impl FnMut(f64, f64, f64)) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        // Log-uniform over twelve decades, so near-diagonal and extreme pairs both occur.
        let x = 10f64.powf(rng.random_range(-6.0..6.0));
        let y = if rng.random_bool(0.1) { x * (1.0 + rng.random_range(-1e-6..1e-6)) } else { 10f64.powf(rng.random_range(-6.0..6.0)) };
        check(x, y, rng.random::<f64>());
    }
}

#[test]
fn q_mean_sweep() {
    let mut worst: f64 = f64::NEG_INFINITY;
    sweep(1, 10_000, |x, y, s| {
        let q = 1.0 + 1e-3 + 7.0 * s;
        let t = q_mean(x, y, q).unwrap();
        let t2 = q_mean(x, y, 2.0).unwrap();
        assert!((t2 - 0.5 * (x + y)).abs() <= 1e-12 * (x + y));
        assert!(t >= x.min(y) * (1.0 - 1e-12) && t <= x.max(y) * (1.0 + 1e-12));
        let excess = (t2 - t).abs() - (q - 2.0).abs() / q * (x - y).abs() / 2.0;
        worst = worst.max(excess / (x + y));
        assert!(excess <= 1e-12 * (x + y), "x={x} y={y} q={q}");
    });
    assert_eq!(q_mean(3.0, 3.0, 1.7).unwrap(), 3.0);
    assert!(q_mean(0.0, 1.0, 2.0).is_err() && q_mean(1.0, 1.0, 1.0).is_err());
    assert!(worst <= 1e-12);
}

#[test]
fn elementary_inequality_sweep() {
    sweep(2, 10_000, |x, y, s| {
        let r = 1.0 + 1e-3 + (1.0 - 1e-3) * s;
        let slack = elementary_inequality_slack(x, y, r);
        let d = x - y;
        let size = d * d * (0.5 * (x + y)).powf(r - 2.0);
        assert!(slack >= -1e-10 * size.max(f64::MIN_POSITIVE), "x={x} y={y} r={r} slack={slack}");
    });
}
