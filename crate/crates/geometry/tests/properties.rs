use nalgebra::DVector;
use proptest::prelude::*;
use trddpc_geometry::Polytope;

fn small_box(half: (f64, f64)) -> Polytope {
    Polytope::box_centered(&[half.0, half.1]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scaling_commutes_with_support(
        hx in 0.1f64..2.0, hy in 0.1f64..2.0, s in 0.0f64..3.0,
        dx in -1.0f64..1.0, dy in -1.0f64..1.0,
    ) {
        prop_assume!(dx.abs() + dy.abs() > 1e-3);
        let p = small_box((hx, hy));
        let d = DVector::from_row_slice(&[dx, dy]);
        let lhs = p.scale(s).unwrap().support(&d).unwrap();
        let rhs = s * p.support(&d).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn sum_then_subtract_recovers_superset(
        hx in 0.5f64..2.0, hy in 0.5f64..2.0, sx in 0.05f64..0.4, sy in 0.05f64..0.4,
    ) {
        // (A ⊕ B) ⊖ B ⊇ A always (equality for boxes).
        let a = small_box((hx, hy));
        let b = small_box((sx, sy));
        let back = a.minkowski_sum(&b).unwrap().pontryagin_diff(&b).unwrap();
        let (contains, margin) = back.contains_poly(&a).unwrap();
        prop_assert!(contains, "margin {margin}");
    }

    #[test]
    fn hull_round_trip_preserves_vertices(
        pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 3..12),
    ) {
        let cloud: Vec<DVector<f64>> =
            pts.iter().map(|(x, y)| DVector::from_row_slice(&[*x, *y])).collect();
        let p = match Polytope::from_vertices(&cloud) {
            Ok(p) => p,
            Err(_) => return Ok(()),
        };
        for v in p.vertices().unwrap() {
            let (inside, margin) = p.contains_point(v).unwrap();
            prop_assert!(inside, "hull vertex outside its own facets: {margin}");
        }
        // Every input point is inside the hull.
        for c in &cloud {
            prop_assert!(p.contains_point(c).unwrap().1 > -1e-8);
        }
    }
}
