//! Spectra and eigenvalue counts of [`DiscreteOperator`]s.

use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::bk::Inertia;
use crate::linalg::lanczos::{window_pairs, Pair, WindowProblem};
use crate::linalg::ShiftedFactor;
use crate::operator::DiscreteOperator;

pub const DEFAULT_DENSE_CAP: usize = 6000;

/// Eigenpairs in ascending order. `eigenvectors[k]` pairs with
/// `eigenvalues[k]` and lives on the operator's active space.
#[derive(Clone, Debug, Default)]
pub struct SpectralResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Option<Vec<Vec<f64>>>,
    pub residuals: Vec<f64>,
}

impl SpectralResult {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn count_below(&self, e: f64) -> usize {
        self.eigenvalues.partition_point(|&l| l < e)
    }

    pub fn in_window(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.eigenvalues.iter().copied().filter(|&l| l >= lo && l <= hi).collect()
    }

    /// Largest |⟨u_a, u_b⟩ − δ_ab|.
    pub fn orthogonality_defect(&self) -> f64 {
        let Some(v) = &self.eigenvectors else { return 0.0 };
        let mut worst = 0.0f64;
        for a in 0..v.len() {
            for b in 0..=a {
                let d: f64 = v[a].iter().zip(&v[b]).map(|(x, y)| x * y).sum();
                let e = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((d - e).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PivotSummary {
    pub min_abs_pivot: f64,
    pub two_by_two_blocks: usize,
    pub zero_pivots: usize,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct InertiaReport {
    pub shift: f64,
    pub count_below: usize,
    pub pivots: PivotSummary,
}

impl InertiaReport {
    fn from_inertia(shift: f64, i: &Inertia) -> Self {
        Self {
            shift,
            count_below: i.neg,
            pivots: PivotSummary { min_abs_pivot: i.min_pivot, two_by_two_blocks: i.two_by_two, zero_pivots: i.zero },
        }
    }
}

fn residual(op: &DiscreteOperator, lam: f64, u: &[f64]) -> f64 {
    let hu = op.apply_vec(u);
    hu.iter().zip(u).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt()
}

/// Full eigendecomposition through the dense backend.
pub fn dense_spectrum(op: &DiscreteOperator) -> Result<SpectralResult> {
    dense_spectrum_capped(op, DEFAULT_DENSE_CAP, true)
}

pub fn dense_spectrum_capped(op: &DiscreteOperator, cap: usize, vectors: bool) -> Result<SpectralResult> {
    let n = op.dim();
    if n > cap {
        return Err(Error::Capacity { dim: n, cap });
    }
    if n == 0 {
        return Ok(SpectralResult { eigenvectors: vectors.then(Vec::new), ..Default::default() });
    }
    let m = op.to_dense();
    if !vectors {
        let mut vals = dense_eigenvalues(&m)?;
        vals.sort_by(f64::total_cmp);
        let residuals = vec![f64::NAN; vals.len()];
        return Ok(SpectralResult { eigenvalues: vals, eigenvectors: None, residuals });
    }
    let eig = m
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::NoConvergence(format!("dense eigensolver: {e:?}")))?;
    let s = eig.S();
    let u = eig.U();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let mut vals = Vec::with_capacity(n);
    let mut vecs = Vec::with_capacity(n);
    let mut res = Vec::with_capacity(n);
    for k in idx {
        let v: Vec<f64> = (0..n).map(|i| u[(i, k)]).collect();
        res.push(residual(op, s[k], &v));
        vals.push(s[k]);
        vecs.push(v);
    }
    Ok(SpectralResult { eigenvalues: vals, eigenvectors: Some(vecs), residuals: res })
}

/// Eigenvalues only, for dense symmetric input.
pub fn dense_eigenvalues(m: &Mat<f64>) -> Result<Vec<f64>> {
    let v = m
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::NoConvergence(format!("dense eigensolver: {e:?}")))?;
    Ok(v)
}

/// Number of eigenvalues strictly below `e` by the inertia of `H − e`.
pub fn inertia_count(op: &DiscreteOperator, e: f64) -> Result<InertiaReport> {
    let f = ShiftedFactor::new(op, e, false)?;
    Ok(InertiaReport::from_inertia(e, &f.inertia))
}

/// Like [`inertia_count`], nudging `e` upward by multiples of
/// `10·ε·‖H‖` until the factorization is regular. Returns the count and
/// the shift actually used.
pub fn inertia_count_perturbed(op: &DiscreteOperator, e: f64) -> Result<(usize, f64)> {
    let step = 10.0 * f64::EPSILON * op.norm_bound().max(e.abs()).max(1.0);
    let mut last = None;
    for k in 0..8 {
        let s = e + step * (k as f64) * 16f64.powi(k as i32 / 2);
        match inertia_count(op, s) {
            Ok(r) => return Ok((r.count_below, s)),
            Err(err @ Error::NearSingular { .. }) => last = Some(err),
            Err(err) => return Err(err),
        }
    }
    Err(last.unwrap())
}

/// Eigenpairs with eigenvalue in `[window.0, window.1]` by shift-invert
/// Lanczos about the midpoint. The population is fixed beforehand by two
/// inertia counts.
pub fn window_spectrum(op: &DiscreteOperator, window: (f64, f64), max_pairs: usize) -> Result<SpectralResult> {
    window_spectrum_seeded(op, window, max_pairs, 0x5eed)
}

pub fn window_spectrum_seeded(
    op: &DiscreteOperator,
    window: (f64, f64),
    max_pairs: usize,
    seed: u64,
) -> Result<SpectralResult> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty window [{lo}, {hi}]")));
    }
    let norm = op.norm_bound();
    // closed window: count below the upper end nudged up
    let (n_hi, _) = inertia_count_perturbed(op, hi)?;
    let (n_lo, _) = inertia_count_perturbed(op, lo - 10.0 * f64::EPSILON * norm.max(1.0))?;
    let target = n_hi.saturating_sub(n_lo);
    if target > max_pairs {
        return Err(Error::WindowOverflow { found: target, cap: max_pairs });
    }
    if target == 0 {
        return Ok(SpectralResult { eigenvectors: Some(Vec::new()), ..Default::default() });
    }
    let pairs = split_window(op, (lo, hi), (n_lo, n_hi), seed, norm, 0)?;
    Ok(SpectralResult {
        eigenvalues: pairs.iter().map(|p| p.value).collect(),
        residuals: pairs.iter().map(|p| p.residual).collect(),
        eigenvectors: Some(pairs.into_iter().map(|p| p.vector).collect()),
    })
}

/// Shift-invert Lanczos on one window; on a stall the window is halved at
/// an inertia-counted midpoint and each half gets its own shift.
fn split_window(
    op: &DiscreteOperator,
    (lo, hi): (f64, f64),
    (n_lo, n_hi): (usize, usize),
    seed: u64,
    norm: f64,
    depth: usize,
) -> Result<Vec<Pair>> {
    let target = n_hi.saturating_sub(n_lo);
    if target == 0 {
        return Ok(Vec::new());
    }
    match lanczos_window(op, lo, hi, target, seed, norm) {
        Err(Error::NoConvergence(_)) if depth < 12 => {
            let (n_mid, mid) = inertia_count_perturbed(op, 0.5 * (lo + hi))?;
            let n_mid = n_mid.clamp(n_lo, n_hi);
            let mut left = split_window(op, (lo, mid), (n_lo, n_mid), seed ^ 0x9e37, norm, depth + 1)?;
            let right = split_window(op, (mid, hi), (n_mid, n_hi), seed ^ 0x7f4a, norm, depth + 1)?;
            left.extend(right);
            left.sort_by(|a, b| a.value.total_cmp(&b.value));
            Ok(left)
        }
        r => r,
    }
}

fn lanczos_window(op: &DiscreteOperator, lo: f64, hi: f64, target: usize, seed: u64, norm: f64) -> Result<Vec<Pair>> {
    let half = 0.5 * (hi - lo);
    let mut sigma = 0.5 * (lo + hi);
    let mut attempt = 0;
    let factor = loop {
        match ShiftedFactor::new(op, sigma, true) {
            Ok(f) => break f,
            Err(Error::NearSingular { .. }) if attempt < 6 => {
                attempt += 1;
                sigma += half * 1e-3 * (attempt as f64) * if attempt % 2 == 0 { -1.0 } else { 1.0 };
            }
            Err(e) => return Err(e),
        }
    };
    let solve = |x: &mut [f64]| factor.solve(x);
    let apply = |x: &[f64]| op.apply_vec(x);
    let prob = WindowProblem {
        dim: op.dim(),
        solve: &solve,
        apply: &apply,
        sigma,
        lo: lo - 10.0 * f64::EPSILON * norm,
        hi: hi + 10.0 * f64::EPSILON * norm,
        target,
        tol: 1e-10 * norm,
        seed,
    };
    window_pairs(&prob)
}
