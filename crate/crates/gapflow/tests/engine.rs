use gapflow::eigensolve::{dense_spectrum, inertia_count, inertia_count_perturbed, window_spectrum};
use gapflow::grid::{PotentialField, Resolution, TubeGrid};
use gapflow::operator::{assemble_hamiltonian, periodic_layout, DiscreteOperator, LowRankTerm};
use gapflow::potential::{sample, Preset};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_op(seed: u64, periodic: bool, lowrank: bool, cut: bool) -> DiscreteOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nx = rng.random_range(6..40);
    let ny = rng.random_range(4..12);
    let pot: Vec<f64> = (0..(nx - 1) * ny).map(|_| rng.random_range(-30.0..30.0)).collect();
    let mut op = if periodic {
        periodic_layout(0.0, 0.1, nx - 1, ny, 1.0 / ny as f64, &pot).unwrap()
    } else {
        let g = TubeGrid::new(-1.0, 1.0, nx, ny).unwrap();
        let v = PotentialField::new(g, pot).unwrap();
        assemble_hamiltonian(&g, &v, &[], vec![]).unwrap()
    };
    if cut {
        let k = rng.random_range(0..op.lines());
        op = op.cut_line(k);
    }
    if lowrank {
        let terms = (0..rng.random_range(1..4))
            .map(|_| LowRankTerm {
                u: (0..op.full_len()).map(|_| rng.random_range(-0.3..0.3)).collect(),
                c: rng.random_range(-40.0..40.0),
            })
            .collect();
        op = op.with_lowrank(terms).unwrap();
    }
    op
}

fn random_field(seed: u64, nx: usize, ny: usize) -> (TubeGrid, PotentialField) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = TubeGrid::new(-1.0, 1.0, nx, ny).unwrap();
    let pot: Vec<f64> = (0..g.dim()).map(|_| rng.random_range(0.0..20.0)).collect();
    (g, PotentialField::new(g, pot).unwrap())
}

#[test]
fn inertia_matches_dense_counts() {
    for seed in 0..60u64 {
        let op = random_op(seed, seed % 3 == 1, seed % 2 == 0, seed % 5 == 0);
        let spec = dense_spectrum(&op).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        for _ in 0..10 {
            let e = rng.random_range(spec.eigenvalues[0] - 5.0..spec.eigenvalues.last().unwrap() + 5.0);
            let (n, s) = inertia_count_perturbed(&op, e).unwrap();
            assert_eq!(n, spec.count_below(s), "seed {seed} e {e}");
        }
    }
}

#[test]
fn extreme_shifts() {
    let op = random_op(7, false, false, false);
    let spec = dense_spectrum(&op).unwrap();
    assert_eq!(inertia_count(&op, spec.eigenvalues[0] - 1.0).unwrap().count_below, 0);
    assert_eq!(inertia_count(&op, spec.eigenvalues.last().unwrap() + 1.0).unwrap().count_below, op.dim());
}

#[test]
fn window_matches_dense() {
    for seed in 0..20u64 {
        let op = random_op(seed, seed % 3 == 1, seed % 2 == 0, seed % 4 == 0);
        let spec = dense_spectrum(&op).unwrap();
        let n = spec.len();
        let lo = spec.eigenvalues[n / 3] - 1e-3;
        let hi = spec.eigenvalues[n / 3 + 5.min(n - n / 3 - 1)] + 1e-3;
        let w = window_spectrum(&op, (lo, hi), 64).unwrap();
        let want = spec.in_window(lo, hi);
        assert_eq!(w.len(), want.len(), "seed {seed}");
        let (a, _) = inertia_count_perturbed(&op, hi).unwrap();
        let (b, _) = inertia_count_perturbed(&op, lo).unwrap();
        assert_eq!(w.len(), a - b);
        for (a, b) in w.eigenvalues.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}");
        }
        assert!(w.orthogonality_defect() < 1e-10);
    }
}

#[test]
fn cut_spectrum_is_union_of_halves() {
    let (nx, ny) = (30, 6);
    let (g, v) = random_field(3, nx, ny);
    let k = 11;
    let cut = assemble_hamiltonian(&g, &v, &[g.line_x(k)], vec![]).unwrap();
    // left: lines 0..k on (−1, x_k); right: lines k+1.. on (x_k, 1)
    let xk = g.line_x(k);
    let gl = TubeGrid::new(-1.0, xk, k + 1, ny).unwrap();
    let gr = TubeGrid::new(xk, 1.0, nx - k - 1, ny).unwrap();
    let vl = PotentialField::new(gl, v.values[..k * ny].to_vec()).unwrap();
    let vr = PotentialField::new(gr, v.values[(k + 1) * ny..].to_vec()).unwrap();
    let left = dense_spectrum(&assemble_hamiltonian(&gl, &vl, &[], vec![]).unwrap()).unwrap();
    let right = dense_spectrum(&assemble_hamiltonian(&gr, &vr, &[], vec![]).unwrap()).unwrap();
    let mut union: Vec<f64> = left.eigenvalues.into_iter().chain(right.eigenvalues).collect();
    union.sort_by(f64::total_cmp);
    let whole = dense_spectrum(&cut).unwrap().eigenvalues;
    assert_eq!(union.len(), whole.len());
    let scale = cut.norm_bound();
    for (a, b) in union.iter().zip(&whole) {
        assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
    }
}

#[test]
fn lowrank_on_eigenvector_shifts_by_c() {
    let (g, v) = random_field(5, 20, 5);
    let op = assemble_hamiltonian(&g, &v, &[], vec![]).unwrap();
    let spec = dense_spectrum(&op).unwrap();
    let k = 3;
    let u = spec.eigenvectors.as_ref().unwrap()[k].clone();
    let c = 1000.0;
    let shifted = op.with_lowrank(vec![LowRankTerm { u: op.extend(&u), c }]).unwrap();
    let want = spec.eigenvalues[k] + c;
    let s = dense_spectrum(&shifted).unwrap();
    assert!(s.eigenvalues.iter().any(|l| (l - want).abs() < 1e-9 * want), "{want} missing");
    // every other eigenvalue is untouched
    let rest: Vec<f64> = spec.eigenvalues.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, l)| *l).collect();
    let got: Vec<f64> = s.eigenvalues.iter().copied().filter(|l| (l - want).abs() > 1e-6 * want).collect();
    for (a, b) in rest.iter().zip(&got) {
        assert!((a - b).abs() < 1e-9 * op.norm_bound());
    }
}

#[test]
fn translation_covariance_on_grid() {
    let res = Resolution::new(1.0 / 16.0, 6).unwrap();
    let (n, t) = (6.0, 0.75);
    let g0 = res.grid(-n, 0.0).unwrap();
    let gt = res.grid(-n - t, -t).unwrap();
    let v = Preset::Mathieu { q: 3.0, phase: 0.1 };
    let vt = Preset::Mathieu { q: 3.0, phase: 0.1 - t };
    let a = assemble_hamiltonian(&g0, &sample(&v, &g0).unwrap(), &[], vec![]).unwrap();
    let b = assemble_hamiltonian(&gt, &sample(&vt, &gt).unwrap(), &[], vec![]).unwrap();
    let ea = dense_spectrum(&a).unwrap().eigenvalues;
    let eb = dense_spectrum(&b).unwrap().eigenvalues;
    let scale = a.norm_bound();
    for (x, y) in ea.iter().zip(&eb) {
        assert!((x - y).abs() <= 1e-10 * scale, "{x} vs {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn assembled_operators_are_symmetric(seed in 0u64..10_000, periodic: bool, lowrank: bool, cut: bool) {
        let op = random_op(seed, periodic, lowrank, cut);
        prop_assert_eq!(op.max_asymmetry(), 0.0);
    }

    #[test]
    fn inertia_is_monotone_in_energy(seed in 0u64..10_000, e1 in -50.0f64..2000.0, de in 0.0f64..500.0) {
        let op = random_op(seed, seed % 2 == 0, seed % 3 == 0, false);
        let (a, _) = inertia_count_perturbed(&op, e1).unwrap();
        let (b, _) = inertia_count_perturbed(&op, e1 + de).unwrap();
        prop_assert!(a <= b);
    }

    #[test]
    fn cuts_never_raise_counts(seed in 0u64..10_000, e in -20.0f64..1500.0, line in 0usize..1000) {
        let (g, v) = random_field(seed, 24, 6);
        let op = assemble_hamiltonian(&g, &v, &[], vec![]).unwrap();
        let cut = op.cut_line(line % op.lines());
        let (a, _) = inertia_count_perturbed(&op, e).unwrap();
        let (b, _) = inertia_count_perturbed(&cut, e).unwrap();
        prop_assert!(b <= a);
    }

    #[test]
    fn more_cuts_raise_ordered_eigenvalues(seed in 0u64..10_000, l1 in 0usize..1000, l2 in 0usize..1000) {
        let (g, v) = random_field(seed, 24, 5);
        let op = assemble_hamiltonian(&g, &v, &[], vec![]).unwrap();
        let c1 = op.cut_line(l1 % op.lines());
        let c2 = c1.cut_line(l2 % op.lines());
        let e0 = dense_spectrum(&op).unwrap().eigenvalues;
        let e1 = dense_spectrum(&c1).unwrap().eigenvalues;
        let e2 = dense_spectrum(&c2).unwrap().eigenvalues;
        let tol = 1e-10 * op.norm_bound();
        for k in 0..e1.len() {
            prop_assert!(e0[k] <= e1[k] + tol);
        }
        for k in 0..e2.len() {
            prop_assert!(e1[k] <= e2[k] + tol);
        }
    }
}
