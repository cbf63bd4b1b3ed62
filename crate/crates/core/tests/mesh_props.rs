use fvkr::geometry::Point2;
use fvkr::mesh::{build_cartesian_mesh, build_voronoi_mesh, mesh_size, validate_admissibility, Domain, Mesh, Tolerances};
use proptest::prelude::*;

fn rectangle() -> impl Strategy<Value = Domain> {
    (-2.0..2.0f64, -2.0..2.0f64, 0.1..3.0f64, 0.1..3.0f64)
        .prop_map(|(x, y, w, h)| Domain::rectangle(Point2::new(x, y), Point2::new(x + w, y + h)).unwrap())
}

fn voronoi() -> impl Strategy<Value = Mesh> {
    prop::collection::vec((0.02..0.98f64, 0.02..0.98f64), 3..40).prop_filter_map("degenerate seeds", |s| {
        let pts: Vec<Point2> = s.into_iter().map(|(x, y)| Point2::new(x, y)).collect();
        build_voronoi_mesh(&pts, &Domain::unit_square()).ok()
    })
}

fn check_orthogonality(mesh: &Mesh) {
    let cells = mesh.cells();
    for f in mesh.interior_faces() {
        let l = f.outer.unwrap();
        let v = (cells[l].center - cells[f.inner].center) * (1.0 / f.d_kl);
        assert!((v - f.normal).norm() <= 1e-9, "face {}", f.id);
    }
}

fn check_antisymmetry(mesh: &Mesh) {
    for f in mesh.interior_faces() {
        let l = f.outer.unwrap();
        let from_k = mesh.neighbors(f.inner).find(|n| n.face.id == f.id).unwrap();
        let from_l = mesh.neighbors(l).find(|n| n.face.id == f.id).unwrap();
        assert_eq!(from_k.normal(), -from_l.normal());
        assert_eq!(from_k.face.area, from_l.face.area);
        assert_eq!(from_k.other, Some(l));
        assert_eq!(from_l.other, Some(f.inner));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cartesian_meshes_are_admissible(d in rectangle(), nx in 1usize..24, ny in 1usize..24) {
        let m = build_cartesian_mesh(&d, nx, ny).unwrap();
        prop_assert!(((m.total_volume() - d.area()) / d.area()).abs() <= 1e-10);
        check_orthogonality(&m);
        check_antisymmetry(&m);
        // Thin slivers may exceed the isoperimetric limit; every other clause holds.
        let tol = Tolerances::default();
        let r = validate_admissibility(&m, &tol);
        prop_assert!(r.orthogonality && r.antisymmetry && r.positive_measures);
        prop_assert_eq!((r.convexity, r.tiling, r.center_placement), (Some(true), Some(true), Some(true)));
        let within = r.isoperimetric_constant.unwrap() <= tol.isoperimetric;
        prop_assert_eq!(r.isoperimetric, Some(within));
        prop_assert_eq!(r.admissible, within);
    }

    #[test]
    fn voronoi_meshes_are_admissible(m in voronoi()) {
        prop_assert!((m.total_volume() - 1.0).abs() <= 1e-10);
        check_orthogonality(&m);
        check_antisymmetry(&m);
        let r = validate_admissibility(&m, &Tolerances::default());
        prop_assert_eq!(r.tiling, Some(true));
        prop_assert!(r.orthogonality && r.antisymmetry);
    }

    #[test]
    fn refinement_halves_h_and_doubles_perimeter_ratio(d in rectangle(), nx in 1usize..16, ny in 1usize..16) {
        let tol = Tolerances::default();
        let coarse = build_cartesian_mesh(&d, nx, ny).unwrap();
        let fine = build_cartesian_mesh(&d, 2 * nx, 2 * ny).unwrap();
        let (hc, hf) = (mesh_size(&coarse).unwrap(), mesh_size(&fine).unwrap());
        prop_assert!((hc / hf - 2.0).abs() <= 1e-12);
        let rc = validate_admissibility(&coarse, &tol).max_perimeter_ratio.unwrap();
        let rf = validate_admissibility(&fine, &tol).max_perimeter_ratio.unwrap();
        prop_assert!((rf / rc - 2.0).abs() <= 1e-12);
    }
}
