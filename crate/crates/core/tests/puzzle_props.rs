use fibrenorm::puzzle::{hausdorff_distance, pullback_curve, roundness, ClosedCurve, PointCloud, PullbackOptions, Shape};
use fibrenorm::C64;
use proptest::prelude::*;
use std::f64::consts::TAU;

fn star(c: C64, r: f64, a: f64, k: u32, m: usize) -> ClosedCurve {
    ClosedCurve::new((0..m).map(|j| {
        let t = TAU * j as f64 / m as f64;
        c + C64::from_polar(r * (1.0 + a * (k as f64 * t).sin()), t)
    }).collect())
    .unwrap()
}

fn cloud(pts: &[(f64, f64)]) -> PointCloud {
    PointCloud::new(pts.iter().map(|&(x, y)| C64::new(x, y)).collect(), 1e-3).unwrap()
}

fn pts() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn hausdorff_is_a_metric_on_clouds(a in pts(), b in pts(), c in pts()) {
        let (a, b, c) = (cloud(&a), cloud(&b), cloud(&c));
        let ab = hausdorff_distance(Shape::Cloud(&a), Shape::Cloud(&b));
        let ba = hausdorff_distance(Shape::Cloud(&b), Shape::Cloud(&a));
        let bc = hausdorff_distance(Shape::Cloud(&b), Shape::Cloud(&c));
        let ac = hausdorff_distance(Shape::Cloud(&a), Shape::Cloud(&c));
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(hausdorff_distance(Shape::Cloud(&a), Shape::Cloud(&a)), 0.0);
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn hausdorff_between_concentric_circles_is_the_radius_gap(r1 in 0.5f64..3.0, r2 in 0.5f64..3.0, cx in -2.0f64..2.0) {
        let c = C64::new(cx, 0.3);
        let a = ClosedCurve::circle(c, r1, 720).unwrap();
        let b = ClosedCurve::circle(c, r2, 720).unwrap();
        let d = hausdorff_distance(Shape::Curve(&a), Shape::Curve(&b));
        prop_assert!((d - (r1 - r2).abs()).abs() <= 1e-4 * r1.max(r2));
    }

    #[test]
    fn roundness_is_similarity_invariant(
        a in 0.0f64..0.3, k in 2u32..6, ar in -2.0f64..2.0, ai in -2.0f64..2.0, br in -5.0f64..5.0, bi in -5.0f64..5.0,
    ) {
        let s = C64::new(ar, ai);
        prop_assume!(s.norm() > 0.1);
        let base = star(C64::new(0.0, 0.0), 1.0, a, k, 96);
        let moved = base.map(|z| s * z + C64::new(br, bi));
        let (r0, r1) = (roundness(&base, 65).unwrap(), roundness(&moved, 65).unwrap());
        // The grid search is not exactly equivariant, so compare to its refinement tolerance.
        prop_assert!((r0 - r1).abs() <= 5e-3 * r0, "{r0} vs {r1}");
        prop_assert!(r0 > 0.0 && r0 <= 0.5 + 1e-12);
    }

    #[test]
    fn star_polygons_are_simple_and_contain_their_center(a in 0.0f64..0.6, k in 1u32..8, m in 16usize..200) {
        let c = star(C64::new(1.0, -1.0), 2.0, a, k, m);
        prop_assert!(c.is_simple());
        prop_assert!(c.contains(C64::new(1.0, -1.0)));
        prop_assert_eq!(c.winding_number(C64::new(1.0, -1.0)).abs(), 1);
        prop_assert!(!c.contains(C64::new(10.0, 10.0)));
    }

    #[test]
    fn resampling_keeps_area_and_perimeter(a in 0.0f64..0.3, k in 2u32..6, m in 64usize..512) {
        let c = star(C64::new(0.0, 0.0), 1.0, a, k, 2048);
        let r = c.resample(m).unwrap();
        prop_assert_eq!(r.len(), m);
        prop_assert!((r.area() - c.area()).abs() <= 0.02 * c.area());
        prop_assert!(r.perimeter() <= c.perimeter() * (1.0 + 1e-12));
        prop_assert!(hausdorff_distance(Shape::Curve(&r), Shape::Curve(&c)) <= 2.0 * c.perimeter() / m as f64);
    }

    #[test]
    fn quadratic_pullback_round_trips(cr in -0.8f64..0.3, ci in -0.5f64..0.5, radius in 2.5f64..6.0) {
        // The preimage of a large circle under z^2 + c is one closed curve of degree two.
        let c = C64::new(cr, ci);
        let f = move |z: C64| Some((z * z + c, 2.0 * z));
        let target = ClosedCurve::circle(C64::new(0.0, 0.0), radius, 200).unwrap();
        let opts = PullbackOptions { anchor: C64::new(radius.sqrt(), 0.0), search_radius: 0.5, must_contain: Some(C64::new(0.0, 0.0)), max_laps: 2 };
        let pre = pullback_curve(&f, &target, &opts).unwrap();
        prop_assert_eq!(pre.len(), 400);
        for (j, &z) in pre.vertices.iter().enumerate() {
            prop_assert!((z * z + c - target.vertices[j % 200]).norm() <= 1e-9 * radius);
        }
        prop_assert!(pre.is_simple());
        prop_assert!(pre.contains(c.sqrt()) || pre.contains(-c.sqrt()));
    }
}

#[test]
fn univalent_pullback_inverts_an_affine_map() {
    let a = C64::new(0.5, 1.5);
    let b = C64::new(-1.0, 2.0);
    let f = move |z: C64| Some((a * z + b, a));
    let target = ClosedCurve::rectangle(C64::new(1.0, 1.0), 3.0, 2.0, 20).unwrap();
    let opts = PullbackOptions { anchor: (target.vertices[0] - b) / a, search_radius: 0.1, must_contain: None, max_laps: 1 };
    let pre = pullback_curve(&f, &target, &opts).unwrap();
    for (z, w) in pre.vertices.iter().zip(&target.vertices) {
        assert!((z - (w - b) / a).norm() < 1e-12);
    }
}

#[test]
fn pullback_through_a_branch_point_needs_two_laps() {
    let f = |z: C64| Some((z * z, 2.0 * z));
    let target = ClosedCurve::circle(C64::new(0.0, 0.0), 1.0, 64).unwrap();
    let opts = PullbackOptions { anchor: C64::new(1.0, 0.0), search_radius: 0.1, must_contain: None, max_laps: 1 };
    assert!(pullback_curve(&f, &target, &opts).is_err());
}
