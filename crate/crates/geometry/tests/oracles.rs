//! Randomized oracle suite for the set calculus: every operation is checked
//! against an independent brute-force route (closed-form boxes, support
//! additivity, bisection gauges) on low-dimensional instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trddpc_geometry::{gauge_norm, Polytope};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_poly(r: &mut ChaCha8Rng, dim: usize) -> Polytope {
    // Hull of a handful of random points, guaranteed full-dimensional by
    // including a small box around a random center.
    let center: DVector<f64> =
        DVector::from_iterator(dim, (0..dim).map(|_| r.random_range(-1.0..1.0)));
    let mut pts = Vec::new();
    for mask in 0..(1u32 << dim) {
        let mut p = center.clone();
        for j in 0..dim {
            p[j] += if mask >> j & 1 == 1 { 0.2 } else { -0.2 };
        }
        pts.push(p);
    }
    let extra = r.random_range(3..8);
    for _ in 0..extra {
        let p = DVector::from_iterator(dim, (0..dim).map(|_| r.random_range(-2.0..2.0)));
        pts.push(p);
    }
    Polytope::from_vertices(&pts).unwrap()
}

fn random_dirs(r: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| {
            let mut d = DVector::from_iterator(dim, (0..dim).map(|_| r.random_range(-1.0..1.0)));
            if d.norm() < 1e-6 {
                d[0] = 1.0;
            }
            let n = d.norm();
            d / n
        })
        .collect()
}

#[test]
fn minkowski_support_additivity_randomized() {
    let mut r = rng(42);
    for case in 0..100 {
        let dim = 1 + case % 3;
        let a = random_poly(&mut r, dim);
        let b = random_poly(&mut r, dim);
        let s = a.minkowski_sum(&b).unwrap();
        for d in random_dirs(&mut r, dim, 16) {
            let lhs = s.support(&d).unwrap();
            let rhs = a.support(&d).unwrap() + b.support(&d).unwrap();
            let tol = 1e-9 * (1.0 + rhs.abs());
            assert!(
                (lhs - rhs).abs() <= tol,
                "case {case}: support mismatch {lhs} vs {rhs}"
            );
        }
    }
}

#[test]
fn pontryagin_axis_box_closed_form() {
    let mut r = rng(7);
    for case in 0..50 {
        let dim = 1 + case % 3;
        let big: Vec<f64> = (0..dim).map(|_| r.random_range(1.0..3.0)).collect();
        let small: Vec<f64> = (0..dim).map(|_| r.random_range(0.0..0.9)).collect();
        let a = Polytope::box_centered(&big).unwrap();
        let b = Polytope::box_centered(&small).unwrap();
        let d = a.pontryagin_diff(&b).unwrap();
        for j in 0..dim {
            let mut e = DVector::zeros(dim);
            e[j] = 1.0;
            let expect = big[j] - small[j];
            assert!((d.support(&e).unwrap() - expect).abs() < 1e-9);
            assert!((d.support(&(-e)).unwrap() - expect).abs() < 1e-9);
        }
    }
}

#[test]
fn pontryagin_duality_spot_checks() {
    let mut r = rng(99);
    for case in 0..30 {
        let dim = 1 + case % 2;
        let a = random_poly(&mut r, dim);
        let b = random_poly(&mut r, dim).scale(0.2).unwrap();
        let diff = a.pontryagin_diff(&b).unwrap();
        if diff.is_empty() {
            continue;
        }
        // Any x in A⊖B plus any vertex of B must land inside A.
        for x in diff.vertices().unwrap() {
            for w in b.vertices().unwrap() {
                let (inside, margin) = a.contains_point(&(x + w)).unwrap();
                assert!(inside, "case {case}: x+w escaped A, margin {margin}");
            }
        }
    }
}

#[test]
fn gauge_norm_matches_bisection_oracle() {
    let mut r = rng(2024);
    for case in 0..40 {
        let dim = 1 + case % 2;
        // Symmetric W built as the hull of ±points keeps 0 interior.
        let mut pts = Vec::new();
        for _ in 0..(dim + 3) {
            let p = DVector::from_iterator(dim, (0..dim).map(|_| r.random_range(0.2..1.5)));
            pts.push(p.clone());
            pts.push(-p);
        }
        let w = Polytope::from_vertices(&pts).unwrap();
        if !w.origin_interior() {
            continue;
        }
        let m = DMatrix::from_fn(dim, dim, |_, _| r.random_range(-1.5..1.5));
        let fast = gauge_norm(&m, &w).unwrap();

        // Bisection oracle: smallest c with M·W ⊆ c·W via vertex containment.
        let (mut lo, mut hi) = (0.0f64, 1e-6f64.max(2.0 * fast + 1.0));
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let scaled = w.scale(mid.max(1e-12)).unwrap();
            let image: Vec<DVector<f64>> =
                w.vertices().unwrap().iter().map(|v| &m * v).collect();
            let ok = image
                .iter()
                .all(|x| scaled.contains_point(x).unwrap().1 >= -1e-12);
            if ok {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!(
            (fast - hi).abs() < 1e-6 * (1.0 + fast),
            "case {case}: gauge {fast} vs bisection {hi}"
        );
    }
}

#[test]
fn hull_union_support_is_max_of_supports() {
    let mut r = rng(5);
    for case in 0..40 {
        let dim = 1 + case % 3;
        let a = random_poly(&mut r, dim);
        let b = random_poly(&mut r, dim);
        let u = Polytope::convex_hull_union(std::slice::from_ref(&a))
            .unwrap()
            .convex_hull_union_with(&b);
        for d in random_dirs(&mut r, dim, 16) {
            let lhs = u.support(&d).unwrap();
            let rhs = a.support(&d).unwrap().max(b.support(&d).unwrap());
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
        }
    }
}

trait UnionWith {
    fn convex_hull_union_with(&self, other: &Polytope) -> Polytope;
}
impl UnionWith for Polytope {
    fn convex_hull_union_with(&self, other: &Polytope) -> Polytope {
        Polytope::convex_hull_union(&[self.clone(), other.clone()]).unwrap()
    }
}

#[test]
fn linear_image_commutes_with_hull() {
    let mut r = rng(77);
    for case in 0..40 {
        let dim = 1 + case % 2;
        let p = random_poly(&mut r, dim);
        let m = DMatrix::from_fn(dim, dim, |_, _| r.random_range(-1.0..1.0));
        let image = p.linear_image(&m).unwrap();
        let pointwise: Vec<DVector<f64>> =
            p.vertices().unwrap().iter().map(|v| &m * v).collect();
        let hull = Polytope::from_vertices(&pointwise).unwrap();
        let (a_in_b, m1) = image.contains_poly(&hull).unwrap();
        let (b_in_a, m2) = hull.contains_poly(&image).unwrap();
        assert!(a_in_b && b_in_a, "case {case}: margins {m1} {m2}");
    }
}

#[test]
fn round_trip_membership() {
    let mut r = rng(31);
    for case in 0..20 {
        let dim = 1 + case % 3;
        let p = random_poly(&mut r, dim);
        // H -> V -> H
        let rebuilt = Polytope::from_vertices(p.vertices().unwrap()).unwrap();
        let mut interior_checked = 0;
        let mut exterior_checked = 0;
        while interior_checked < 100 || exterior_checked < 100 {
            let x =
                DVector::from_iterator(dim, (0..dim).map(|_| r.random_range(-3.0..3.0)));
            let (inside, margin) = p.contains_point(&x).unwrap();
            if inside && margin > 1e-6 && interior_checked < 100 {
                assert!(rebuilt.contains_point(&x).unwrap().0);
                interior_checked += 1;
            } else if !inside && margin < -1e-6 && exterior_checked < 100 {
                assert!(!rebuilt.contains_point(&x).unwrap().0);
                exterior_checked += 1;
            }
        }
    }
}
