use std::sync::Arc;

use gapflow::experiments::floquet_window;
use gapflow::grid::Resolution;
use gapflow::potential::{DislocationFamily, Preset};
use gapflow::transform::{
    assemble_transformed_operator, branch_lipschitz_fit, build_phi, bv_translation_bound, dislocated_operator,
    equivalence_check, oscillating_profile, phi_bounds, random_pl_ensemble, smooth_bump, transformed_coefficients,
    translation_lipschitz_probe, window_branches, EquivalenceSetup, PotentialRule,
};
use proptest::prelude::*;

fn mathieu_pair() -> DislocationFamily {
    DislocationFamily::new(
        Arc::new(Preset::Mathieu { q: 2.0, phase: 0.0 }),
        Arc::new(Preset::Mathieu { q: 2.0, phase: 0.5 }),
    )
}

fn mathieu_window(res: Resolution) -> (f64, f64) {
    floquet_window(&Preset::Mathieu { q: 2.0, phase: 0.0 }, res, 0, 0.05).unwrap()
}

#[test]
fn transformed_equals_direct_at_zero() {
    let res = Resolution::new(1.0 / 20.0, 4).unwrap();
    let grid = res.grid(-3.0, 3.0).unwrap();
    for rule in [PotentialRule::Sample, PotentialRule::CellAverage] {
        let c = assemble_transformed_operator(0.0, &mathieu_pair(), &grid, 1.0, rule).unwrap().to_dense();
        let h = dislocated_operator(&mathieu_pair(), 0.0, &grid, rule).unwrap().to_dense();
        assert_eq!(c.nrows(), h.nrows());
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                assert_eq!(c[(i, j)], h[(i, j)], "entry ({i}, {j}) with {rule:?}");
            }
        }
    }
}

#[test]
fn coefficients_are_free_outside_the_band() {
    let res = Resolution::new(1.0 / 32.0, 4).unwrap();
    let grid = res.grid(-4.0, 4.0).unwrap();
    let map = build_phi(0.3, 0.5).unwrap().mirrored();
    let (lo, hi) = map.band();
    let c = transformed_coefficients(&map, &grid);
    let h = res.hx;
    for (i, &x) in c.xs.iter().enumerate() {
        if x < lo - h || x > hi + h {
            assert_eq!(c.b[i], 0.0, "x = {x}");
            assert_eq!(c.q[i], 0.0, "x = {x}");
            assert_eq!(c.a_faces[i], 1.0, "x = {x}");
        }
    }
    assert!(c.b.iter().any(|&v| v != 0.0));
}

#[test]
fn equivalence_improves_with_grid() {
    let t = 0.25;
    let mut gaps = Vec::new();
    for hx in [1.0 / 40.0, 1.0 / 80.0] {
        let res = Resolution::new(hx, 4).unwrap();
        let r = equivalence_check(t, &mathieu_pair(), mathieu_window(res), res, &EquivalenceSetup::default()).unwrap();
        assert!(r.counts_match && r.count_direct > 0, "{r:?}");
        gaps.push(r.max_discrepancy);
    }
    assert!(gaps[1] <= 1e-3 && gaps[1] < gaps[0], "{gaps:?}");
}

#[test]
fn branches_agree_across_sides_and_do_not_jump() {
    let res = Resolution::new(1.0 / 80.0, 4).unwrap();
    let window = mathieu_window(res);
    let l = 6.0;
    let ts: Vec<f64> = (0..=10).map(|k| 0.05 * k as f64).collect();
    let fam = mathieu_pair();
    let rule = PotentialRule::CellAverage;
    let direct = window_branches(window, &ts, 64, |t| dislocated_operator(&fam, t, &res.grid(-l - t, l)?, rule)).unwrap();
    let trans = window_branches(window, &ts, 64, |t| assemble_transformed_operator(t, &fam, &res.grid(-l, l)?, 1.0, rule)).unwrap();
    assert_eq!(direct.len(), trans.len());
    assert!(!direct.is_empty());
    for (a, b) in direct.iter().zip(&trans) {
        assert_eq!(a.samples.len(), b.samples.len());
        for (p, q) in a.samples.iter().zip(&b.samples) {
            assert_eq!(p.0, q.0);
            assert!((p.1 - q.1).abs() <= 1e-3, "t = {}: {} vs {}", p.0, p.1, q.1);
        }
        if a.samples.len() >= 4 {
            let fa = branch_lipschitz_fit(a).unwrap();
            let fb = branch_lipschitz_fit(b).unwrap();
            let scale = fa.lipschitz_constant.max(fb.lipschitz_constant).max(1e-3);
            assert!((fa.lipschitz_constant - fb.lipschitz_constant).abs() <= 0.1 * scale);
            // a step never crosses a large part of the gap
            assert!(fa.max_jump <= 0.25 * (window.1 - window.0), "jump {}", fa.max_jump);
        }
    }
}

#[test]
fn smooth_bump_ratio_tends_to_its_variation() {
    let f = smooth_bump(0.005).unwrap();
    let r = translation_lipschitz_probe(&f, &[0.1, 0.05, 0.025], 1.05).unwrap();
    assert!(r.holds);
    assert!(r.limit_gap < 0.05, "{r:?}");
}

#[test]
fn oscillating_profile_ratios_logged() {
    for hx in [0.01, 0.001] {
        let f = oscillating_profile(hx).unwrap();
        let r = translation_lipschitz_probe(&f, &[0.1, 0.05, 0.025, 0.0125], 1.05).unwrap();
        println!("hx = {hx}: discrete TV {:.3}, ratios {:?}", r.total_variation, r.ratios);
        assert!(r.ratios.iter().all(|q| q.1.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn phi_family_bounds(t in -0.5f64..=0.5, width in 0.1f64..=1.0) {
        let phi = build_phi(t, width).unwrap();
        let half = build_phi(0.5, width).unwrap();
        for (map, top) in [(phi.clone(), half.clone()), (phi.mirrored(), half.mirrored())] {
            let b = phi_bounds(&map, -3.0, 4.0, 10_000);
            prop_assert!(b.max_displacement <= t.abs() + 1e-12);
            prop_assert!(b.max_deriv_deviation <= t.abs() + 1e-12);
            prop_assert!(b.min_deriv >= 0.5 - 1e-12);
            // φ'' is linear in t
            let unit = phi_bounds(&top, -3.0, 4.0, 10_000).max_second;
            prop_assert!((b.max_second - 2.0 * t.abs() * unit).abs() <= 1e-9 * unit);
        }
    }

    #[test]
    fn phi_inverse_roundtrip(t in -0.5f64..=0.5, x in -5.0f64..5.0) {
        let phi = build_phi(t, 1.0).unwrap().mirrored();
        prop_assert!((phi.inverse(phi.eval(x)) - x).abs() < 1e-12);
    }

    #[test]
    fn bv_translation_inequality(seed in 0u64..100_000, t in -0.5f64..=0.5) {
        let f = random_pl_ensemble(seed, 1, -2.0, 0.1, 41, 2, 1.0).unwrap().remove(0);
        let phi = build_phi(t, 1.0).unwrap();
        let r = bv_translation_bound(&f, &phi, 1.05).unwrap();
        prop_assert!(r.holds, "{:?}", r);
    }

    #[test]
    fn translation_ratio_below_variation(seed in 0u64..100_000) {
        let f = random_pl_ensemble(seed, 1, -2.0, 0.05, 81, 3, 1.0).unwrap().remove(0);
        let r = translation_lipschitz_probe(&f, &[0.4, 0.2, 0.1, 0.05, 0.025], 1.05).unwrap();
        prop_assert!(r.holds, "{:?}", r);
    }
}
