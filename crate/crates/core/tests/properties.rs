//! Randomized invariants across the library.

use std::sync::Arc;

use bernoulli_lab::analyze::cusp_exponent;
use bernoulli_lab::elliptic::{apply_operator, solve_dirichlet, DirichletProblem};
use bernoulli_lab::minimize::{minimize_exact, minimize_exact_from, MinimizeProblem};
use bernoulli_lab::radial::{minimize_radial, radial_energy, RadialConfig};
use bernoulli_lab::weights::{superlevel_profile, GrowthCheck, PlateauRule};
use bernoulli_lab::{BernoulliWeight, CoefficientField, Grid, Region, ScalarField, WeightSpec};
use proptest::prelude::*;

fn disk(n: usize) -> Arc<Region> {
    let grid = Grid::cube(2, -1.0, 1.0, n).unwrap();
    Arc::new(Region::ball(grid, vec![0.0, 0.0], 1.0).unwrap())
}

fn random_field(region: Arc<Region>, coeffs: [f64; 4]) -> ScalarField {
    let [a, b, c, d] = coeffs;
    ScalarField::from_fn(region, |x| a + b * x[0] + c * (3.0 * x[1]).sin() + d * x[0] * x[1]).unwrap()
}

fn coeffs() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-2.0..2.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weak_norm_grows_with_the_region(
        a in 0.05..2.0f64,
        b in 0.0..3.0f64,
        c in 0.0..3.0f64,
        q in 1.1..4.0f64,
        r in 0.2..0.9f64,
    ) {
        // the level-count convention is monotone when the added cells do not
        // lower the minimum; these fields are smallest at the shared center
        let outer = disk(24);
        let inner = outer.restrict_ball(&[0.0, 0.0], r).unwrap();
        let f = ScalarField::from_fn(outer.clone(), |x| {
            a + b * (x[0] * x[0] + x[1] * x[1]) + c * (x[0] * x[1]).powi(2)
        })
        .unwrap();
        let small = f.weak_lq_norm(q, &inner).unwrap();
        let big = f.weak_lq_norm(q, &outer).unwrap();
        prop_assert!(small <= big * (1.0 + 1e-12));
    }

    #[test]
    fn weak_norm_is_below_the_strong_norm(c in coeffs(), q in 1.1..4.0f64) {
        let region = disk(24);
        let f = random_field(region.clone(), c);
        let vol = region.grid().cell_volume();
        let strong = region.cells().map(|i| f.values()[i].abs().powf(q) * vol).sum::<f64>().powf(1.0 / q);
        prop_assert!(f.weak_lq_norm(q, &region).unwrap() <= strong * (1.0 + 1e-12));
    }

    #[test]
    fn l2_norm_is_a_norm(a in coeffs(), b in coeffs(), s in -5.0..5.0f64) {
        let region = disk(20);
        let f = random_field(region.clone(), a);
        let g = random_field(region.clone(), b);
        let nf = f.l2_norm(&region).unwrap();
        let scaled = f.map(|v| s * v).l2_norm(&region).unwrap();
        prop_assert!((scaled - s.abs() * nf).abs() <= 1e-12 * (1.0 + scaled));
        let sum = ScalarField::new(
            region.clone(),
            f.values().iter().zip(g.values()).map(|(x, y)| x + y).collect(),
        )
        .unwrap();
        prop_assert!(sum.l2_norm(&region).unwrap() <= nf + g.l2_norm(&region).unwrap() + 1e-12);
    }

    #[test]
    fn coefficient_bounds_are_enforced(e1 in 0.1..3.0f64, e2 in 0.1..3.0f64, angle in 0.0..3.2f64) {
        let (c, s) = (angle.cos(), angle.sin());
        let m = vec![
            e1 * c * c + e2 * s * s,
            (e1 - e2) * c * s,
            (e1 - e2) * c * s,
            e1 * s * s + e2 * c * c,
        ];
        let inside = [e1, e2].iter().all(|e| (0.5 - 1e-9..=2.0 + 1e-9).contains(e));
        let built = CoefficientField::from_fn(disk(8), 0.5, 2.0, |_| m.clone());
        prop_assert_eq!(built.is_ok(), inside);
    }

    #[test]
    fn operator_is_symmetric(a in coeffs(), b in coeffs(), seed in 0u64..1000) {
        let region = disk(20);
        let coeff = CoefficientField::random_symmetric(region.clone(), 0.5, 2.0, seed).unwrap();
        let u = random_field(region.clone(), a);
        let v = random_field(region.clone(), b);
        let au = apply_operator(&coeff, &u).unwrap();
        let av = apply_operator(&coeff, &v).unwrap();
        let lhs: f64 = region.cells().map(|i| au.values()[i] * v.values()[i]).sum();
        let rhs: f64 = region.cells().map(|i| u.values()[i] * av.values()[i]).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn dirichlet_solutions_obey_the_maximum_principle(c in coeffs(), seed in 0u64..1000) {
        let region = disk(20);
        let coeff = CoefficientField::random_symmetric(region.clone(), 0.5, 2.0, seed).unwrap();
        let g = random_field(region.clone(), c);
        let u = solve_dirichlet(&DirichletProblem {
            coeff,
            active: region.clone(),
            boundary: g.clone(),
            tolerance: 1e-12,
        })
        .unwrap();
        let interior = region.interior();
        let data: Vec<f64> = region.cells().filter(|&i| !interior[i]).map(|i| g.values()[i]).collect();
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // full anisotropic Q1 stencils are not M-matrices; allow a small
        // overshoot relative to the data range
        let slack = 0.05 * (hi - lo) + 1e-8;
        for i in region.cells() {
            prop_assert!(u.values()[i] >= lo - slack && u.values()[i] <= hi + slack);
        }
    }

    #[test]
    fn cusp_exponent_is_one_on_the_diagonal(q in 1.6..60.0f64, d in 2usize..4) {
        prop_assume!(q > d as f64 / 2.0 && q > 1.0);
        prop_assert!((cusp_exponent(q, q, d).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn radial_optimum_is_below_every_scanned_radius(m in 0.05..0.3f64, r in 0.05..0.95f64) {
        let c = RadialConfig::new(3, 2.0, m, PlateauRule::TauConsistent).unwrap();
        let w = c.weight().unwrap();
        let best = minimize_radial(&c, &w).unwrap();
        prop_assert!(best.energy <= radial_energy(r, &c, &w).unwrap() + 1e-12);
        for &(_, e) in &best.scan {
            prop_assert!(best.energy <= e + 1e-12);
        }
    }

    #[test]
    fn superlevel_measures_are_monotone(x in -0.5..0.5f64, y in -0.5..0.5f64, amp in 0.1..2.0f64) {
        let w = BernoulliWeight::new(WeightSpec::PointSingularity {
            center: vec![x, y],
            amplitude: amp,
            exponent: 1.0,
            base: 0.5,
        })
        .unwrap();
        let profile = superlevel_profile(&w, &GrowthCheck {
            center: vec![x, y],
            p: 2.0,
            sigma: 0.0,
            radii: vec![0.05, 0.1, 0.2, 0.4],
            thresholds: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            cone: None,
            resolution: 64,
        })
        .unwrap();
        for (i, row) in profile.measures.iter().enumerate() {
            // shrinking in the threshold, growing in the radius, capped by the ball
            prop_assert!(row.windows(2).all(|w| w[1] <= w[0] + 1e-15));
            prop_assert!(row.iter().all(|&m| m <= profile.caps[i] + 1e-15));
            if i > 0 {
                let prev = &profile.measures[i - 1];
                prop_assert!(row.iter().zip(prev).all(|(a, b)| a + 1e-15 >= *b));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn exact_minimizers_are_bounded_monotone_fixed_points(
        m in 0.3..1.2f64,
        tilt in -0.3..0.3f64,
        plateau in 0.5..12.0f64,
    ) {
        let region = disk(20);
        let coeff = CoefficientField::identity(region.clone());
        let g = ScalarField::from_fn(region, |x| m + tilt * x[0]).unwrap();
        let w = BernoulliWeight::constant(plateau).unwrap();
        let p = MinimizeProblem::new(coeff, w, g.clone(), 0.0).unwrap();
        let s = minimize_exact(&p).unwrap();
        let hi = p.max_boundary();
        let lo = 0.0f64.min(m - tilt.abs());
        for i in p.region().cells() {
            let v = s.u.values()[i];
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            // one phase: nonnegative data and γ = 0 keep u nonnegative
            prop_assert!(v >= -1e-9);
        }
        let eta = 1e-10 * s.trace[0].abs();
        prop_assert!(s.trace.windows(2).all(|w| w[1] <= w[0] + eta));
        let again = minimize_exact_from(&p, &s.u).unwrap();
        prop_assert_eq!(again.accepted_moves, 0);
    }
}
