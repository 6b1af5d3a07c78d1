use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use proptest::prelude::*;
use suction_core::tissue::{
    bernstein_basis, evaluate_surface, generate_surface, sample_heightmap, Extent, TissueSurface,
};

fn extent() -> Extent {
    Extent::new(-0.1, -0.08, 0.1, 0.08)
}

/// Exact B_{n,i}(x) over the rationals, x taken as the exact value of the f64.
fn bernstein_exact(n: usize, i: usize, x: f64) -> f64 {
    let x = BigRational::from_float(x).unwrap();
    let one = BigRational::one();
    let fact = |k: usize| (1..=k).fold(BigInt::one(), |acc, j| acc * BigInt::from(j));
    let binom = BigRational::new(fact(n), fact(i) * fact(n - i));
    let pow = |b: &BigRational, e: usize| (0..e).fold(BigRational::one(), |acc, _| acc * b);
    (binom * pow(&x, i) * pow(&(one - &x), n - i)).to_f64().unwrap()
}

#[test]
fn basis_matches_rational_evaluation() {
    let v = bernstein_basis(5, 2, 0.3).unwrap();
    let exact = bernstein_exact(5, 2, 0.3);
    assert!((v - exact).abs() <= 4.0 * f64::EPSILON * exact, "{v} vs {exact}");
    assert!((v - 0.3087).abs() < 1e-12);

    for n in 0..=12 {
        for i in 0..=n {
            for k in 0..=20 {
                let x = k as f64 / 20.0;
                let got = bernstein_basis(n, i, x).unwrap();
                let want = bernstein_exact(n, i, x);
                assert!((got - want).abs() <= 1e-14, "n={n} i={i} x={x}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn seeded_surface_stays_within_amplitude() {
    let amplitude = 0.012;
    let s = generate_surface(1, 4, 4, extent(), amplitude).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for a in 0..=100 {
        for b in 0..=100 {
            let z = evaluate_surface(&s, a as f64 / 100.0, b as f64 / 100.0).unwrap().z;
            lo = lo.min(z);
            hi = hi.max(z);
        }
    }
    assert!(lo >= -amplitude && hi <= amplitude, "[{lo}, {hi}]");
    assert!(hi > lo);
}

#[test]
fn heightmap_matches_pointwise_evaluation() {
    let s = generate_surface(1, 4, 4, extent(), 0.01).unwrap();
    let h = sample_heightmap(&s, 64, 64).unwrap();
    for r in 0..64 {
        for c in 0..64 {
            let z = evaluate_surface(&s, c as f64 / 63.0, r as f64 / 63.0).unwrap().z;
            assert_eq!(h.get(r, c), z, "cell ({r}, {c})");
        }
    }
}

#[test]
fn bilinear_heightmap_is_the_corner_heights() {
    let e = extent();
    let zs = [0.001, -0.002, 0.003, 0.004];
    let pts = vec![
        glam::DVec3::new(e.min_x, e.min_y, zs[0]),
        glam::DVec3::new(e.min_x, e.max_y, zs[1]),
        glam::DVec3::new(e.max_x, e.min_y, zs[2]),
        glam::DVec3::new(e.max_x, e.max_y, zs[3]),
    ];
    let s = TissueSurface::from_control_points(1, 1, pts, e).unwrap();
    let h = sample_heightmap(&s, 2, 2).unwrap();
    assert_eq!([h.get(0, 0), h.get(1, 0), h.get(0, 1), h.get(1, 1)], zs);
}

#[test]
fn lattice_is_monotone_and_grid_sized() {
    let s = generate_surface(9, 3, 5, extent(), 0.01).unwrap();
    assert_eq!(s.control_points().len(), 4 * 6);
    for i in 0..=3 {
        for j in 0..=5 {
            let p = s.control_point(i, j);
            if i > 0 {
                assert!(p.x > s.control_point(i - 1, j).x);
            }
            if j > 0 {
                assert!(p.y > s.control_point(i, j - 1).y);
            }
            assert!(p.z.abs() <= 0.01);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partition_of_unity(n in 0usize..=10, x in 0.0f64..=1.0) {
        let sum: f64 = (0..=n).map(|i| bernstein_basis(n, i, x).unwrap()).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn symmetry(n in 0usize..=10, k in 0usize..=10, x in 0.0f64..=1.0) {
        let i = k.min(n);
        let a = bernstein_basis(n, i, x).unwrap();
        let b = bernstein_basis(n, n - i, 1.0 - x).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn basis_in_unit_interval(n in 0usize..=20, k in 0usize..=20, x in 0.0f64..=1.0) {
        let v = bernstein_basis(n, k.min(n), x).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn convex_hull(seed in any::<u64>(), u in 0.0f64..=1.0, v in 0.0f64..=1.0) {
        let s = generate_surface(seed, 4, 4, extent(), 0.01).unwrap();
        let (lo, hi) = s.control_z_range();
        let z = evaluate_surface(&s, u, v).unwrap().z;
        prop_assert!(z >= lo - 1e-15 && z <= hi + 1e-15);
    }

    #[test]
    fn generation_is_pure(seed in any::<u64>()) {
        let a = generate_surface(seed, 4, 4, extent(), 0.01).unwrap();
        let b = generate_surface(seed, 4, 4, extent(), 0.01).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn corners_are_exact(seed in any::<u64>(), n in 1usize..=8, m in 1usize..=8) {
        let s = generate_surface(seed, n, m, extent(), 0.02).unwrap();
        prop_assert_eq!(evaluate_surface(&s, 0.0, 0.0).unwrap(), s.control_point(0, 0));
        prop_assert_eq!(evaluate_surface(&s, 1.0, 1.0).unwrap(), s.control_point(n, m));
        prop_assert_eq!(evaluate_surface(&s, 1.0, 0.0).unwrap(), s.control_point(n, 0));
        prop_assert_eq!(evaluate_surface(&s, 0.0, 1.0).unwrap(), s.control_point(0, m));
    }
}
