use std::f64::consts::PI;

use fvkr::discretize::{discrete_compressibility, discretize_initial_datum, discretize_velocity, FnVelocity};
use fvkr::geometry::Point2;
use fvkr::mesh::{build_cartesian_mesh, build_voronoi_mesh, Domain, Mesh};
use fvkr::quadrature::polygon_rule;
use proptest::prelude::*;

fn mesh() -> impl Strategy<Value = Mesh> {
    prop_oneof![
        (1usize..12, 1usize..12).prop_map(|(nx, ny)| build_cartesian_mesh(&Domain::unit_square(), nx, ny).unwrap()),
        prop::collection::vec((0.02..0.98f64, 0.02..0.98f64), 3..30).prop_filter_map("degenerate seeds", |s| {
            let pts: Vec<Point2> = s.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
            build_voronoi_mesh(&pts, &Domain::unit_square()).ok()
        }),
    ]
}

/// Positive bumps `Σ a exp(-|x - c|²/s²)` plus a floor.
fn bumps() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.05..0.4f64, 0.1..5.0f64), 1..4)
}

fn eval(b: &[(f64, f64, f64, f64)], p: Point2) -> f64 {
    0.01 + b
        .iter()
        .map(|&(x, y, s, a)| a * (-((p.x - x).powi(2) + (p.y - y).powi(2)) / (s * s)).exp())
        .sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Cell averaging never increases an `L^q` norm.
    #[test]
    fn datum_norms_do_not_grow(m in mesh(), b in bumps()) {
        let f = |p: Point2| eval(&b, p);
        let theta = discretize_initial_datum(&f, &m, 3).unwrap();
        for q in [1.5, 2.0, 4.0] {
            let discrete = theta.lq_norm(&m, q);
            let exact = m
                .cells()
                .iter()
                .flat_map(|c| polygon_rule(8, &c.vertices))
                .map(|(p, w)| w * f(p).powf(q))
                .sum::<f64>()
                .powf(1.0 / q);
            prop_assert!(discrete <= exact * (1.0 + 1e-9), "q = {}: {} > {}", q, discrete, exact);
        }
    }

    /// `u_KL^n = -u_LK^n` for any field.
    #[test]
    fn fluxes_are_antisymmetric(m in mesh(), a in -3.0..3.0f64, w in 0.0..10.0f64) {
        let u = FnVelocity::new(move |t: f64, x: Point2| Point2::new(a * x.y + (w * t).sin(), x.x * x.x - a), 10.0);
        let flux = discretize_velocity(&u, &m, 0.25, 1.0, 2, 2).unwrap();
        for n in 0..4 {
            for f in m.interior_faces() {
                let l = f.outer.unwrap();
                prop_assert_eq!(flux.from_cell(&m, n, f.inner, f.id), -flux.from_cell(&m, n, l, f.id));
            }
            for f in m.faces().iter().filter(|f| f.is_boundary()) {
                prop_assert_eq!(flux.slab(n)[f.id], 0.0);
            }
        }
    }

    /// For `u = g(t) v(x)` with `v·n = 0` on the walls and
    /// `∇·v = (a+b)π cos(πx) cos(πy)`, the discrete compressibility stays below
    /// `∫ |g| dt · |a+b| π`.
    #[test]
    fn discrete_compressibility_is_bounded(
        nx in 2usize..16, a in -2.0..2.0f64, b in -2.0..2.0f64,
        c0 in -1.0..1.0f64, c1 in -1.0..1.0f64, w in 0.5..8.0f64, steps in 1usize..12,
    ) {
        let m = build_cartesian_mesh(&Domain::unit_square(), nx, nx).unwrap();
        let g = move |t: f64| c0 + c1 * (w * t).sin();
        let u = FnVelocity::new(
            move |t: f64, x: Point2| {
                Point2::new(a * (PI * x.x).sin() * (PI * x.y).cos(), b * (PI * x.y).sin() * (PI * x.x).cos()) * g(t)
            },
            (a.abs() + b.abs()) * (c0.abs() + c1.abs()),
        );
        let t_final = 1.0;
        let k = t_final / steps as f64;
        let flux = discretize_velocity(&u, &m, k, t_final, 4, 4).unwrap();
        let discrete = discrete_compressibility(&flux, &m);
        let fine = 20_000;
        let int_g = (0..fine).map(|i| g((i as f64 + 0.5) / fine as f64).abs()).sum::<f64>() / fine as f64;
        let continuous = int_g * (a + b).abs() * PI;
        prop_assert!(discrete <= continuous * (1.0 + 1e-4) + 1e-10, "{} > {}", discrete, continuous);
    }
}

/// The datum's mass approaches `∫ f` as the quadrature order grows.
#[test]
fn datum_mass_converges_with_quadrature() {
    let pts: Vec<Point2> = (0..25)
        .map(|i| {
            let s = i as f64;
            Point2::new(0.05 + 0.9 * (s * 0.618034).fract(), 0.05 + 0.9 * (s * 0.414214 + 0.3).fract())
        })
        .collect();
    let m = build_voronoi_mesh(&pts, &Domain::unit_square()).unwrap();
    let f = |p: Point2| (3.0 * p.x + 2.0 * p.y).exp();
    let exact = (3f64.exp() - 1.0) * (2f64.exp() - 1.0) / 6.0;
    let errors: Vec<f64> = (1..=5)
        .map(|q| (discretize_initial_datum(&f, &m, q).unwrap().mass(&m) - exact).abs())
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] <= w[0] || w[1] < 1e-12, "{errors:?}");
    }
    assert!(errors[4] < 1e-8 * exact, "{errors:?}");
}
