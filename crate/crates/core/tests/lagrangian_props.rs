use fvkr::discretize::{CellField, FnVelocity};
use fvkr::geometry::{centroid, Point2};
use fvkr::lagrangian::{em_step, sample_initial};
use fvkr::mesh::{build_voronoi_mesh, Domain};
use proptest::prelude::*;

/// Convex polygon from sorted angles on a slightly squashed circle.
fn polygon() -> impl Strategy<Value = Domain> {
    (prop::collection::vec(0.0..1.0f64, 3..9), 0.6..1.0f64).prop_filter_map("degenerate polygon", |(mut t, squash)| {
        t.sort_by(f64::total_cmp);
        t.dedup_by(|a, b| (*a - *b).abs() < 0.05);
        let v: Vec<Point2> = t
            .iter()
            .map(|s| {
                let a = s * std::f64::consts::TAU;
                Point2::new(0.5 + 0.5 * a.cos(), 0.5 + 0.5 * squash * a.sin())
            })
            .collect();
        let d = Domain::convex_polygon(v).ok()?;
        (d.area() > 0.1).then_some(d)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn paths_stay_inside_with_bounded_local_time(
        domain in polygon(), kappa in 0.0..0.5f64, drift in (-3.0..3.0f64, -3.0..3.0f64),
        dt in 1e-3..0.05f64, seed in any::<u64>(),
    ) {
        let c = centroid(domain.vertices());
        let seeds: Vec<Point2> = domain.vertices()[..3].iter().map(|&v| c + (v - c) * 0.3).collect();
        let mesh = build_voronoi_mesh(&seeds, &domain).unwrap();
        let theta0 = CellField::constant(mesh.n_cells(), 1.0);
        let u = FnVelocity::new(move |_, x: Point2| Point2::new(drift.0 - x.y, drift.1 + x.x), 6.0);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut ens = sample_initial(&mesh, &theta0, 300, seed, kappa).unwrap();
                let mut history = Vec::new();
                for _ in 0..20 {
                    let before = ens.local_time.clone();
                    em_step(&mut ens, &u, &domain, dt).unwrap();
                    for p in &ens.positions {
                        assert!(domain.inner_distance(*p) >= -1e-12, "{p:?} left the domain");
                    }
                    for (a, b) in before.iter().zip(&ens.local_time) {
                        assert!(b >= a && *b <= ens.time + 1e-12);
                    }
                    history.push(ens.positions.clone());
                }
                history
            })
        };
        prop_assert_eq!(run(1), run(3));
    }
}
