use std::f64::consts::PI;
use std::sync::Arc;

use gapflow::grid::Resolution;
use gapflow::ids::{
    assemble_torus_hamiltonian, check_window, fit_counts, plane_gaps, ring_eigenvalues, torus_count_below,
    torus_window_count, TorusMethod,
};
use gapflow::potential::{DislocationFamily, Preset};
use proptest::prelude::*;

fn lattice_pair() -> DislocationFamily {
    DislocationFamily::new(
        Arc::new(Preset::Lattice { a: 3.0, b: 0.6, px: 0.0, py: 0.0 }),
        Arc::new(Preset::Lattice { a: 3.0, b: 0.6, px: 0.5, py: 0.25 }),
    )
}

fn dense_count(n: f64, t: f64, fam: &DislocationFamily, res: Resolution, lo: f64, hi: f64) -> usize {
    let h = assemble_torus_hamiltonian(n, t, fam, res).unwrap().to_dense();
    let e = h.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
    e.iter().filter(|&&l| l >= lo && l <= hi).count()
}

#[test]
fn direct_window_count_matches_dense_eigenvalues() {
    let res = Resolution::new(0.125, 4).unwrap();
    let fam = lattice_pair();
    for t in [0.0, 0.25, 0.5, 1.0] {
        for window in [(2.0, 9.0), (10.0, 40.0), (-1.0, 100.0)] {
            let got = torus_window_count(1.5, t, &fam, window, res, TorusMethod::Direct).unwrap();
            let want = dense_count(1.5, t, &fam, res, window.0, window.1);
            assert_eq!(got, want, "t = {t}, window {window:?}");
        }
    }
}

#[test]
fn non_separable_family_refuses_kronecker_route() {
    let res = Resolution::new(0.125, 4).unwrap();
    assert!(torus_count_below(1.0, 0.0, &lattice_pair(), 5.0, res, TorusMethod::Kronecker).is_err());
    assert!(torus_count_below(1.0, 0.0, &lattice_pair(), 5.0, res, TorusMethod::Auto).is_ok());
}

#[test]
fn free_ring_matches_closed_form() {
    let (m, h) = (24, 0.1);
    let got = ring_eigenvalues(h, &vec![0.0; m]).unwrap();
    let mut want: Vec<f64> = (0..m).map(|k| (2.0 - 2.0 * (2.0 * PI * k as f64 / m as f64).cos()) / (h * h)).collect();
    want.sort_by(f64::total_cmp);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-10 * want[m - 1], "{a} vs {b}");
    }
}

#[test]
fn periodic_ring_carries_translation_degeneracy() {
    // 2n unit periods of a Mathieu potential: Bloch momenta ±θ pair up,
    // only θ = 0 and θ = π stay simple, two per band. Higher gaps close
    // to rounding level, so only the lowest three bands are inspected.
    let (steps, bands) = (16, 3);
    let h = 1.0 / steps as f64;
    for periods in [4usize, 6, 8] {
        let v: Vec<f64> = (0..periods * steps).map(|i| 4.0 * (2.0 * PI * i as f64 * h).cos()).collect();
        let mut e = ring_eigenvalues(h, &v).unwrap();
        let tol = 1e-9 * e[e.len() - 1];
        e.truncate(bands * periods + 1);
        let simple = (0..e.len())
            .take(bands * periods)
            .filter(|&i| {
                let left = i > 0 && (e[i] - e[i - 1]).abs() < tol;
                let right = i + 1 < e.len() && (e[i + 1] - e[i]).abs() < tol;
                !left && !right
            })
            .count();
        assert_eq!(simple, 2 * bands, "{periods} periods");
    }
}

#[test]
fn product_window_is_checked_against_plane_gaps() {
    let res = Resolution::new(1.0 / 16.0, 16).unwrap();
    let p = Preset::Product { q1: 20.0, q2: 20.0 };
    let fam = DislocationFamily::preset(p.clone());
    let gaps = plane_gaps(&p, res, -100.0, 60.0).unwrap().unwrap();
    let g = gaps[0];
    let mid = 0.5 * (g.0 + g.1);
    let w = 0.1 * (g.1 - g.0);
    let found = check_window(&fam, (mid - w, mid + w), res, None).unwrap();
    assert_eq!(found, g);
    assert!(check_window(&fam, (g.0 - 1.0, mid), res, None).is_err());
    // a lattice side has no separable gap to check against
    assert!(check_window(&lattice_pair(), (1.0, 2.0), res, None).is_err());
    assert!(check_window(&lattice_pair(), (1.0, 2.0), res, Some((0.5, 3.0))).is_ok());
}

#[test]
fn undislocated_torus_has_no_states_in_a_plane_gap() {
    let res = Resolution::new(1.0 / 16.0, 16).unwrap();
    let p = Preset::Product { q1: 20.0, q2: 20.0 };
    let fam = DislocationFamily::preset(p.clone());
    let g = plane_gaps(&p, res, -100.0, 60.0).unwrap().unwrap()[0];
    let mid = 0.5 * (g.0 + g.1);
    for n in [2.0, 4.0, 8.0] {
        assert_eq!(torus_window_count(n, 0.0, &fam, (mid - 0.1, mid + 0.1), res, TorusMethod::Auto).unwrap(), 0);
    }
}

#[test]
fn linear_counts_fit_exactly() {
    let ns = [4.0, 8.0, 16.0, 32.0];
    let counts = [16, 32, 64, 128];
    let f = fit_counts(&ns, &counts);
    assert!((f.slope - 4.0).abs() < 1e-12 && f.intercept.abs() < 1e-9);
    assert!((f.slope_top - 4.0).abs() < 1e-12);
    assert!(f.nondecreasing && f.tail_nonincreasing);
    assert!(f.count_per_n.iter().all(|&c| (c - 4.0).abs() < 1e-12));
    let g = fit_counts(&ns, &[16, 32, 30, 200]);
    assert!(!g.nondecreasing && !g.tail_nonincreasing);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn kronecker_agrees_with_direct_on_products(
        q1 in 0.5f64..6.0,
        q2 in 0.5f64..6.0,
        k in 0usize..=8,
        e in -20.0f64..150.0,
    ) {
        let res = Resolution::new(0.125, 4).unwrap();
        let fam = DislocationFamily::new(
            Arc::new(Preset::Product { q1, q2 }),
            Arc::new(Preset::Product { q1: q2, q2 }),
        );
        let t = k as f64 * res.hx;
        let a = torus_count_below(1.0, t, &fam, e, res, TorusMethod::Kronecker).unwrap();
        let b = torus_count_below(1.0, t, &fam, e, res, TorusMethod::Direct).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn torus_count_is_monotone_in_energy(k in 0usize..=8, e in -20.0f64..150.0, de in 0.0f64..40.0) {
        let res = Resolution::new(0.125, 4).unwrap();
        let t = k as f64 * res.hx;
        let a = torus_count_below(1.0, t, &lattice_pair(), e, res, TorusMethod::Direct).unwrap();
        let b = torus_count_below(1.0, t, &lattice_pair(), e + de, res, TorusMethod::Direct).unwrap();
        prop_assert!(a <= b);
    }
}
