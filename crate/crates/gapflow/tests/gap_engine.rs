use std::sync::OnceLock;

use faer::Mat;
use gapflow::gap::{
    floquet_gaps, interface_state_count, localization_profile, locate_gap, Approximant, GapPolicy, GapSpec,
};
use gapflow::grid::Resolution;
use gapflow::potential::{DislocationFamily, Preset};
use proptest::prelude::*;

fn res() -> Resolution {
    Resolution::new(1.0 / 16.0, 8).unwrap()
}

/// Eigenvalues of one period of the chain `−u'' + v u` with periodic
/// (`sign = 1`) or antiperiodic (`sign = −1`) closure.
fn closed_chain(v: &[f64], h: f64, sign: f64) -> Vec<f64> {
    let n = v.len();
    let w = 1.0 / (h * h);
    let mut m = Mat::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 2.0 * w + v[i];
        if i + 1 < n {
            m[(i, i + 1)] = -w;
            m[(i + 1, i)] = -w;
        }
    }
    m[(0, n - 1)] += -w * sign;
    m[(n - 1, 0)] += -w * sign;
    let mut e = m.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
    e.sort_by(f64::total_cmp);
    e
}

/// Bands of a periodic chain: edges are the periodic and antiperiodic
/// eigenvalues, which interlace as p0 < a0 ≤ a1 < p1 ≤ p2 < a2 ≤ a3 < …
fn bloch_bands(v: &[f64], h: f64) -> Vec<(f64, f64)> {
    let mut edges: Vec<f64> = closed_chain(v, h, 1.0).into_iter().chain(closed_chain(v, h, -1.0)).collect();
    edges.sort_by(f64::total_cmp);
    edges.chunks(2).map(|c| (c[0], c[1])).collect()
}

fn minkowski_gaps(bands: &[(f64, f64)], mu: &[f64], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut iv: Vec<(f64, f64)> = mu.iter().flat_map(|m| bands.iter().map(move |b| (b.0 + m, b.1 + m))).collect();
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in iv {
        match merged.last_mut() {
            Some(l) if a <= l.1 + 1e-12 => l.1 = l.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    merged.windows(2).map(|w| (w[0].1, w[1].0)).filter(|g| g.0 >= lo && g.1 <= hi).collect()
}

fn mathieu_nodes(q: f64, h: f64, steps: usize) -> Vec<f64> {
    (0..steps).map(|i| 2.0 * q * (2.0 * std::f64::consts::PI * i as f64 * h).cos()).collect()
}

#[test]
fn mathieu_gap_matches_bloch_oracle() {
    let r = res();
    let v = mathieu_nodes(2.0, r.hx, 16);
    // no y-dependence: transverse modes (2 sin(πj/8)/hy)², j = 0 is 0
    let want = minkowski_gaps(&bloch_bands(&v, r.hx), &[0.0], -10.0, 30.0);
    let got = floquet_gaps(&Preset::Mathieu { q: 2.0, phase: 0.0 }, r, -10.0, 30.0).unwrap().unwrap();
    assert!(!got.is_empty());
    assert!((got[0].0 - want[0].0).abs() < 1e-8 && (got[0].1 - want[0].1).abs() < 1e-8, "{got:?} vs {want:?}");
}

#[test]
fn product_gaps_are_minkowski_sums() {
    let r = Resolution::new(1.0 / 16.0, 16).unwrap();
    let (q1, q2) = (20.0, 20.0);
    let v1 = mathieu_nodes(q1, r.hx, 16);
    let hy = r.hy();
    let v2: Vec<f64> = (0..16).map(|j| 2.0 * q2 * (2.0 * std::f64::consts::PI * j as f64 * hy).cos()).collect();
    let mu = closed_chain(&v2, hy, 1.0);
    let want = minkowski_gaps(&bloch_bands(&v1, r.hx), &mu, -100.0, 60.0);
    let got = floquet_gaps(&Preset::Product { q1, q2 }, r, -100.0, 60.0).unwrap().unwrap();
    assert_eq!(got.len(), want.len(), "{got:?} vs {want:?}");
    for (g, w) in got.iter().zip(&want) {
        assert!((g.0 - w.0).abs() < 1e-8 && (g.1 - w.1).abs() < 1e-8, "{g:?} vs {w:?}");
    }
}

struct Model {
    family: DislocationFamily,
    gap: GapSpec,
    located: (f64, f64),
}

fn model() -> &'static Model {
    static M: OnceLock<Model> = OnceLock::new();
    M.get_or_init(|| {
        let family = DislocationFamily::preset(Preset::Mathieu { q: 2.0, phase: 0.0 });
        let mut policy = GapPolicy::new(res());
        policy.e_max = 30.0;
        let g = locate_gap(&family, &policy).unwrap().remove(0);
        Model { family, gap: GapSpec::from_gap(g.a, g.b, None, None).unwrap(), located: (g.a, g.b) }
    })
}

#[test]
fn located_gap_agrees_with_oracle() {
    let m = model();
    let v = mathieu_nodes(2.0, res().hx, 16);
    let want = minkowski_gaps(&bloch_bands(&v, res().hx), &[0.0], -10.0, 30.0)[0];
    assert!((m.located.0 - want.0).abs() < 1e-3 && (m.located.1 - want.1).abs() < 1e-3, "{:?} vs {want:?}", m.located);
}

#[test]
fn corrections_clear_the_window_and_cutoff_defect_shrinks() {
    let m = model();
    let mut defects = Vec::new();
    for n in [20.0, 40.0, 80.0] {
        let ap = Approximant::new(&m.family, &m.gap, n, res(), 64).unwrap();
        for c in [&ap.plus, &ap.minus] {
            assert_eq!(c.residual_window_count(&m.family, false).unwrap(), 0, "n = {n}");
        }
        defects.push(ap.plus.chi_defect().unwrap().max(ap.minus.chi_defect().unwrap()));
        assert_eq!(ap.spectral_hole().unwrap(), 0, "H̃(n, 0) has spectrum near E at n = {n}");
    }
    assert!(defects[1] <= defects[0] && defects[2] <= defects[1], "{defects:?}");
    // C/n: n·defect must not grow
    let scaled: Vec<f64> = defects.iter().zip([20.0, 40.0, 80.0]).map(|(d, n)| d * n).collect();
    assert!(scaled[2] <= scaled[0] * 1.5 + 1e-12, "{scaled:?}");
}

#[test]
fn gap_of_undislocated_approximant_is_stable_in_n() {
    let m = model();
    let counts: Vec<usize> = [20.0, 40.0]
        .iter()
        .map(|&n| {
            let ap = Approximant::new(&m.family, &m.gap, n, res(), 64).unwrap();
            ap.gap_eigenvalues(0.0).unwrap().iter().filter(|l| (*l - m.gap.e).abs() < m.gap.beta).count()
        })
        .collect();
    assert_eq!(counts, vec![0, 0]);
}

#[test]
fn crossing_state_is_localized_at_interface() {
    let m = model();
    let ap = Approximant::new(&m.family, &m.gap, 20.0, res(), 64).unwrap();
    let sweep = ap.sweep(&gapflow::gap::SweepOptions::new(2.0), false).unwrap();
    let c = sweep.crossings.first().expect("a crossing below t = 2");
    assert!(c.tau > 0.0 && c.tau <= 2.0);
    assert!((c.eigenvalue - m.gap.e).abs() <= 1e-6);
    let prof = localization_profile(&c.eigenvector, &c.dof_x, 0.0, 0.25);
    let m0 = prof.m0.expect("tail mass never drops below 1/4");
    assert!(m0 < 0.25 * ap.n, "m0 = {m0}");
    let fit = gapflow::decay::decay_fit(&c.eigenvector, &c.dof_x, 0.0);
    assert!(fit.gamma > 0.0 && fit.fit_residual < 0.1, "{fit:?}");
}

#[test]
fn interface_count_bounded_below_essential_spectrum() {
    let m = model();
    let counts: Vec<usize> = (1..=20).map(|t| interface_state_count(t as f64, &m.family, -4.5, res()).unwrap()).collect();
    let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    assert!(hi - lo <= 1, "{counts:?}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn counting_chain_at_grid_times(k in 0usize..=128) {
        let m = model();
        let ap = Approximant::new(&m.family, &m.gap, 20.0, res(), 64).unwrap();
        let t = k as f64 * res().hx;
        let s = ap.chain(&[t]).unwrap().remove(0);
        prop_assert!(s.n_full >= s.n_dec);
        prop_assert_eq!(s.n_dec, s.n1 + s.n2 + s.n3);
        prop_assert_eq!(s.n1 + s.n3, s.n_dec0);
    }
}
