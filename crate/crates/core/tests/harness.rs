use fvkr::discretize::{compute_kmax, discretize_initial_datum, ScalarField};
use fvkr::geometry::Point2;
use fvkr::harness::*;
use fvkr::mesh::{build_cartesian_mesh, build_voronoi_mesh, Domain};
use fvkr::Error;

fn case(name: &str) -> TestCase {
    find_case(name).unwrap()
}

fn l1(mesh: &fvkr::mesh::Mesh, a: &[f64], b: &[f64]) -> f64 {
    mesh.cells().iter().map(|c| c.volume * (a[c.id] - b[c.id]).abs()).sum()
}

#[test]
fn catalog_has_the_four_cases() {
    let cases = builtin_cases();
    let names: Vec<&str> = cases.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["diffusion", "rotation", "rough-vortex", "compressive"]);
    for c in &cases {
        c.validate().unwrap();
    }
    assert_eq!(find_case("b").unwrap().name, "rotation");
    assert!(find_case("nope").is_err());
    let c = case("c");
    assert!(!c.regularity.lipschitz && c.regularity.p < 4.0);
}

#[test]
fn closed_form_needs_a_closed_form() {
    let mut c = case("c");
    c.reference = ReferenceKind::Exact;
    assert!(matches!(c.validate(), Err(Error::InvalidArgument(_))));
    assert!(case("d").exact_at(0.1).is_err());
}

#[test]
fn cosine_series_decays_mode_by_mode() {
    let a = case("a");
    let t = 0.3;
    let x = Point2::new(0.3, 0.8);
    let pi = std::f64::consts::PI;
    let expected = 1.0
        + 0.4 * (pi * x.x).cos() * (-a.kappa * pi * pi * t).exp()
        + 0.3 * (pi * x.x).cos() * (pi * x.y).cos() * (-2.0 * a.kappa * pi * pi * t).exp()
        + 0.2 * (2.0 * pi * x.y).cos() * (-4.0 * a.kappa * pi * pi * t).exp();
    assert!((a.exact_at(t).unwrap().value(x) - expected).abs() < 1e-14);
}

#[test]
fn vortex_is_incompressible_and_compression_matches_closed_form() {
    let c = case("c");
    let k = compute_kmax(&c.velocity_field(), &c.domain, 2.0, 2.0, c.t_final).unwrap();
    assert_eq!(k.value, c.t_final);
    assert_eq!(k.compressibility, 0.0);

    // ∇·u ≡ -1: (q-1)/q · k · 1 = (α-1)/α.
    let d = case("d");
    let (q, alpha) = (2.0, 1.1);
    let k = compute_kmax(&d.velocity_field(), &d.domain, q, alpha, d.t_final).unwrap();
    let closed = (alpha - 1.0) / alpha / ((q - 1.0) / q * 1.0);
    assert!((k.value - closed).abs() < 1e-12 * closed, "{} vs {closed}", k.value);
}

#[test]
fn reference_at_zero_is_the_discretized_datum() {
    let mesh = build_cartesian_mesh(&Domain::unit_square(), 8, 8).unwrap();
    for c in [case("a"), case("b")] {
        let r = reference_solution(&c, 0.0, &mesh, 0.05).unwrap();
        let d = discretize_initial_datum(&c.datum, &mesh, QUAD_ORDER).unwrap();
        for (x, y) in r.values.iter().zip(&d.values) {
            assert!((x - y).abs() <= 1e-13 * y.abs().max(1.0));
        }
    }
}

#[test]
fn strong_diffusion_flattens_to_the_mean() {
    let mesh = build_cartesian_mesh(&Domain::unit_square(), 6, 6).unwrap();
    let a = case("a").with_kappa(50.0);
    let r = reference_solution(&a, 1.0, &mesh, 0.1).unwrap();
    for v in &r.values {
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rotating_patch_keeps_its_mass_and_turns() {
    let b = case("b");
    let s = b.exact_at(b.t_final).unwrap();
    let DatumSpec::Square { center, angle, blur, .. } = s else {
        panic!("square datum expected")
    };
    let turn = 3.0 * b.t_final;
    assert!((angle - turn).abs() < 1e-15);
    assert!((center.dist(Point2::new(0.5, 0.5)) - 0.1).abs() < 1e-14);
    assert!((blur - (2.0 * b.kappa * b.t_final).sqrt()).abs() < 1e-15);
    let mesh = build_cartesian_mesh(&Domain::unit_square(), 16, 16).unwrap();
    let r = reference_solution(&b, b.t_final, &mesh, 0.01).unwrap();
    assert!((r.mass(&mesh) - 1.0).abs() < 1e-12);
}

#[test]
fn square_averages_agree_across_formulas() {
    let sq = |angle: f64, blur: f64| DatumSpec::Square {
        center: Point2::new(0.5, 0.5),
        half: 0.1,
        height: 1.0,
        angle,
        blur,
    };
    let (lo, hi) = (Point2::new(0.43, 0.38), Point2::new(0.55, 0.47));
    // Closed form at angle 0 against the quadrature path a hair away.
    let a = sq(0.0, 0.03).rect_average(lo, hi).unwrap();
    let b = sq(1e-12, 0.03).rect_average(lo, hi).unwrap();
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    // Unblurred: exact overlap fraction.
    let c = sq(0.0, 0.0).rect_average(Point2::new(0.55, 0.55), Point2::new(0.65, 0.65)).unwrap();
    assert!((c - 0.25).abs() < 1e-14);
    // A quarter turn maps the square onto itself.
    let d = sq(std::f64::consts::FRAC_PI_2, 0.0).rect_average(lo, hi).unwrap();
    let e = sq(0.0, 0.0).rect_average(lo, hi).unwrap();
    assert!((d - e).abs() < 1e-12);
}

#[test]
fn fine_grid_reference_converges_to_the_series() {
    let mesh = build_cartesian_mesh(&Domain::unit_square(), 4, 4).unwrap();
    let exact = case("a");
    let t = exact.t_final;
    let k = t / 4.0;
    let e = reference_solution(&exact, t, &mesh, k).unwrap();
    let gaps: Vec<f64> = [2, 4, 8]
        .iter()
        .map(|&refine| {
            let mut c = exact.clone();
            c.reference = ReferenceKind::FineGrid { refine };
            let f = reference_solution(&c, t, &mesh, k).unwrap();
            assert!((f.mass(&mesh) - e.mass(&mesh)).abs() < 1e-12);
            l1(&mesh, &f.values, &e.values)
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn fine_grid_needs_a_cartesian_target() {
    let pts: Vec<Point2> = (0..12)
        .map(|i| Point2::new(0.05 + 0.9 * (i as f64 * 0.618).fract(), 0.05 + 0.9 * (i as f64 * 0.377).fract()))
        .collect();
    let mesh = build_voronoi_mesh(&pts, &Domain::unit_square()).unwrap();
    let c = case("c");
    assert!(matches!(reference_solution(&c, 0.1, &mesh, 0.05), Err(Error::InvalidArgument(_))));
}

#[test]
fn particle_reference_is_a_histogram_of_the_same_mass() {
    let mesh = build_cartesian_mesh(&Domain::unit_square(), 8, 8).unwrap();
    let mut d = case("d");
    d.reference = ReferenceKind::Particles {
        n: 2000,
        dt: 0.05,
        seed: 3,
    };
    let r = Reference::build(&d, &mesh, 0.05, &[0.0, 0.25, 0.5]).unwrap();
    for t in [0.0, 0.25, 0.5] {
        let f = r.at(t).unwrap();
        assert!((f.mass(&mesh) - 1.0).abs() < 1e-3);
        assert!(f.min() >= 0.0);
    }
    assert!(r.at(0.3).is_err());
}

fn small(levels: usize) -> LadderConfig {
    LadderConfig {
        levels,
        n0: 4,
        coupling: Coupling::H2 { c: 0.5 },
        ..Default::default()
    }
}

#[test]
fn ladder_rows_are_ordered_and_shrink() {
    let r = run_ladder(&case("a"), &small(3)).unwrap();
    assert_eq!(r.rows.len(), 3);
    for (i, w) in r.rows.windows(2).enumerate() {
        assert_eq!(w[0].level, i);
        assert!(w[1].h == 0.5 * w[0].h);
        assert!((w[1].k - 0.25 * w[0].k).abs() < 1e-15);
        assert_eq!(w[0].delta, w[1].delta);
        // Monotone refinement up to a 10% allowance.
        assert!(w[1].error <= 1.1 * w[0].error);
    }
    let fin = r.rows.last().unwrap();
    assert!((fin.delta - (fin.h + fin.k.sqrt())).abs() < 1e-15);
    assert!(r.rate_h.unwrap().slope > 0.8);
}

#[test]
fn ladders_are_deterministic() {
    let strip = |r: LadderResult| r.rows.into_iter().map(|x| (x.h, x.k, x.delta, x.error)).collect::<Vec<_>>();
    let a = run_ladder(&case("b"), &small(3)).unwrap();
    let b = run_ladder(&case("b"), &small(3)).unwrap();
    assert_eq!(a.rate_h, b.rate_h);
    assert_eq!(strip(a), strip(b));
}

#[test]
fn matched_delta_keeps_errors_bounded() {
    let mut cfg = small(3);
    cfg.delta = DeltaPolicy::Matched;
    let r = run_ladder(&case("b"), &cfg).unwrap();
    for w in r.rows.windows(2) {
        assert!(w[1].delta < w[0].delta);
    }
    for row in &r.rows {
        assert!(row.error < 2.0, "{row:?}");
    }
}

#[test]
fn distance_falls_as_delta_grows() {
    let c = case("b");
    let lv = solve_level(&c, 16, 32, 2.0, 2.0).unwrap();
    let errs: Vec<f64> = [0.01, 0.03, 0.1, 0.3]
        .iter()
        .map(|&d| level_error(&c, &lv, d, 1).unwrap())
        .collect();
    for w in errs.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{errs:?}");
    }
}

#[test]
fn short_ladders_and_large_steps_are_refused() {
    assert!(matches!(run_ladder(&case("a"), &small(2)), Err(Error::Config(_))));
    // Rigid rotation all the way to the walls squeezes the boundary cells.
    let mut b = case("b");
    b.velocity = VelocitySpec::Rotation {
        center: Point2::new(0.5, 0.5),
        omega: 3.0,
        taper: None,
    };
    let cfg = LadderConfig {
        coupling: Coupling::FixedK { k: 0.125 },
        ..small(3)
    };
    match run_ladder(&b, &cfg) {
        Err(Error::Config(m)) => assert!(m.starts_with("level ") && m.contains("k_max"), "{m}"),
        other => panic!("expected a configuration error, got {other:?}"),
    }
    assert!(run_time_ladder(&case("b"), 8, 6, &small(3)).is_err());
}

#[test]
fn time_ladder_halves_k() {
    let r = run_time_ladder(&case("b"), 8, 4, &small(3)).unwrap();
    assert!(r.rate_h.is_none());
    for w in r.rows.windows(2) {
        assert_eq!(w[0].h, w[1].h);
        assert!((w[1].k - 0.5 * w[0].k).abs() < 1e-15);
    }
    let same = run_time_ladder(&case("b"), 8, 4, &small(3)).unwrap();
    assert_eq!(r.rows[0].error, same.rows[0].error);
}

#[test]
fn fit_recovers_a_power_law() {
    let x = [0.1, 0.05, 0.025, 0.0125];
    let y: Vec<f64> = x.iter().map(|h: &f64| 3.0 * h.powf(1.5)).collect();
    let f = loglog_fit(&x, &y).unwrap();
    assert!((f.slope - 1.5).abs() < 1e-12);
    assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    assert!((f.r_squared - 1.0).abs() < 1e-12);
    assert!(loglog_fit(&x, &[1.0, 0.0, 1.0, 1.0]).is_err());
}

#[test]
fn report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_ladder(&case("a"), &small(4)).unwrap();
    let (csv, json) = emit_report(&r, dir.path()).unwrap();
    let rows = read_ladder_csv(&csv).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows, r.rows);
    let header = std::fs::read_to_string(&csv).unwrap();
    assert!(header.starts_with("level,h,k,delta,error,runtime_s\n"));
    let back: LadderResult = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(back, r);
    assert!(back.rate_h.unwrap().r_squared > 0.9);

    let empty = LadderResult { rows: vec![], ..r };
    assert!(emit_report(&empty, dir.path()).is_err());
    let blocked = dir.path().join("ladder.csv").join("x");
    assert!(matches!(emit_report(&back, &blocked), Err(Error::Io { .. })));
}
