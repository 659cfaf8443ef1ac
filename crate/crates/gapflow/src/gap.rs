//! Gaps, correction projections, the approximating operators `H̃_{n,t}`
//! and the dislocation sweep that drives an eigenvalue through `E`.
//!
//! Geometry of `H̃_{n,t}` on `(−n−t, n)`: lines left of the interface sit on
//! the grid of `ξ = x + t` (`ξ = −n + i·hx`), lines at and right of the
//! interface on `x = j·hx`. For `t` a multiple of `hx` both families lie on
//! one uniform grid. In between, the last left line sits at `x = −δ` with
//! `δ = t mod hx` and the mass-lumped stencil handles the short cell, which
//! makes the operator continuous in `t`.

use serde::{Deserialize, Serialize};

use crate::eigensolve::{inertia_count_perturbed, window_spectrum, SpectralResult};
use crate::error::{Error, Result, ResultExt};
use crate::floquet::{gaps_between, transverse_eigenvalues, tube_bands, FloquetChain};
use crate::grid::{Resolution, TubeGrid};
use crate::operator::{build_laplacian, lumped_x, DiscreteOperator, LowRankTerm};
use crate::par;
use crate::potential::{sample, sample_dislocation, DislocationFamily, Sampler};

// ---------------------------------------------------------------------------
// gap data

/// Target energy inside a gap `(a0, b0)` with its safety margins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSpec {
    pub a0: f64,
    pub b0: f64,
    pub e: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GapSpec {
    pub fn new(a0: f64, b0: f64, e: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(a0 < e && e < b0) {
            return Err(Error::Config(format!("need a0 < E < b0, got {a0} < {e} < {b0}")));
        }
        if !(alpha > 0.0 && 2.0 * alpha <= (e - a0).min(b0 - e) * (1.0 + 1e-12)) {
            return Err(Error::Config(format!(
                "alpha = {alpha} violates dist(E, band edges) >= 2 alpha"
            )));
        }
        if !(beta > 0.0 && beta <= 2.0 * alpha / 3.0 * (1.0 + 1e-12)) {
            return Err(Error::Config(format!("beta = {beta} must lie in (0, 2 alpha / 3]")));
        }
        Ok(Self { a0, b0, e, alpha, beta })
    }

    /// Largest admissible margins: `α` from the band edges, `β` from `α` and
    /// the measured distance of `E` to `σ(H₀)`.
    pub fn from_gap(a0: f64, b0: f64, e: Option<f64>, dist_h0: Option<f64>) -> Result<Self> {
        let e = e.unwrap_or(0.5 * (a0 + b0));
        let alpha = 0.5 * (e - a0).min(b0 - e);
        let mut beta = 2.0 * alpha / 3.0;
        if let Some(d) = dist_h0 {
            if d > 0.0 {
                beta = beta.min(d / 3.0);
            }
        }
        Self::new(a0, b0, e, alpha, beta)
    }

    /// `[E − 2β, E + 2β]`.
    pub fn window(&self) -> (f64, f64) {
        (self.e - 2.0 * self.beta, self.e + 2.0 * self.beta)
    }
}

/// How gaps are searched for on truncations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPolicy {
    pub res: Resolution,
    /// truncation lengths: the first is scanned (together with its double),
    /// the second refines
    pub sizes: [f64; 2],
    pub e_max: f64,
    pub scan_step: f64,
    pub min_width: f64,
    pub edge_tol: f64,
}

impl GapPolicy {
    pub fn new(res: Resolution) -> Self {
        Self { res, sizes: [32.0, 512.0], e_max: 40.0, scan_step: 0.1, min_width: 0.5, edge_tol: 0.05 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LocatedGap {
    pub a: f64,
    pub b: f64,
    /// edges found on each (potential, truncation size) pair
    pub per_truncation: Vec<(f64, f64)>,
    /// matching gap of the separable band-structure oracle, when available
    pub floquet: Option<(f64, f64)>,
}

impl LocatedGap {
    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn floquet_mismatch(&self) -> Option<f64> {
        self.floquet.map(|(a, b)| (a - self.a).abs().max((b - self.b).abs()))
    }
}

/// Truncation of `L + V` to `(−len/2, len/2)`.
pub fn truncation(v: &dyn Sampler, len: f64, res: Resolution) -> Result<DiscreteOperator> {
    let g = res.grid(-0.5 * len, 0.5 * len)?;
    let field = sample(v, &g)?;
    Ok(build_laplacian(&g).plus_potential(&field.values)?)
}

fn count(op: &DiscreteOperator, e: f64) -> Result<usize> {
    Ok(inertia_count_perturbed(op, e)?.0)
}

/// `sup{λ ∈ [lo, hi] : count(λ) < c}` to bisection accuracy.
fn edge_below(op: &DiscreteOperator, c: usize, mut lo: f64, mut hi: f64) -> Result<f64> {
    for _ in 0..60 {
        let m = 0.5 * (lo + hi);
        if count(op, m)? < c {
            lo = m;
        } else {
            hi = m;
        }
        if hi - lo < 1e-11 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `inf{λ ∈ [lo, hi] : count(λ) > c}`.
fn edge_above(op: &DiscreteOperator, c: usize, mut lo: f64, mut hi: f64) -> Result<f64> {
    for _ in 0..60 {
        let m = 0.5 * (lo + hi);
        if count(op, m)? > c {
            hi = m;
        } else {
            lo = m;
        }
        if hi - lo < 1e-11 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Eigenvalue-free intervals of `op` inside `[e_min, e_max]` that are at
/// least `min_width` wide, with edges at eigenvalues.
pub fn scan_gaps(op: &DiscreteOperator, e_min: f64, e_max: f64, step: f64, min_width: f64) -> Result<Vec<(f64, f64)>> {
    let npts = ((e_max - e_min) / step).ceil() as usize + 1;
    let lam: Vec<f64> = (0..npts).map(|k| e_min + k as f64 * step).collect();
    let counts: Vec<usize> = par::map(&lam, |&l| count(op, l)).into_iter().collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut k = 0;
    while k < npts {
        let mut j = k;
        while j + 1 < npts && counts[j + 1] == counts[k] {
            j += 1;
        }
        // runs touching the scan ends are not bounded gaps; count 0 is the
        // region below the spectrum
        if k > 0 && j + 1 < npts && counts[k] > 0 {
            let a = edge_below(op, counts[k], lam[k - 1], lam[k])?;
            let b = edge_above(op, counts[k], lam[j], lam[j + 1])?;
            if b - a >= min_width {
                out.push((a, b));
            }
        }
        k = j + 1;
    }
    Ok(out)
}

/// Refines a gap found on one truncation on another: the edges are the
/// eigenvalues of `op` adjacent to the midpoint.
fn refine_gap(op: &DiscreteOperator, gap: (f64, f64), reach: f64) -> Result<(f64, f64)> {
    let mid = 0.5 * (gap.0 + gap.1);
    let c = count(op, mid)?;
    let lo = gap.0 - reach;
    let hi = gap.1 + reach;
    let a = if count(op, lo)? < c { edge_below(op, c, lo, mid)? } else { lo };
    let b = if count(op, hi)? > c { edge_above(op, c, mid, hi)? } else { hi };
    Ok((a, b))
}

/// Band-structure oracle for separable, x-periodic samplers.
pub fn floquet_gaps(v: &dyn Sampler, res: Resolution, e_min: f64, e_max: f64) -> Result<Option<Vec<(f64, f64)>>> {
    let (Some((vx, vy)), Some(p)) = (v.separable(), v.x_period()) else { return Ok(None) };
    let steps = (p / res.hx).round() as usize;
    if ((steps as f64) * res.hx - p).abs() > 1e-9 {
        return Ok(None);
    }
    let chain = FloquetChain::new(|x| vx(x), res.hx, steps, 0.0)?;
    let ys: Vec<f64> = (0..res.ny).map(|j| vy(j as f64 * res.hy())).collect();
    let mu = transverse_eigenvalues(&ys)?;
    let bands = tube_bands(&chain.bands(), &mu);
    Ok(Some(gaps_between(&bands, e_min, e_max)))
}

fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(a0, a1) in a {
        for &(b0, b1) in b {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                out.push((lo, hi));
            }
        }
    }
    out.sort_by(|x, y| x.0.total_cmp(&y.0));
    out
}

/// Gaps common to the truncations of `L + V⁽¹⁾` and `L + V⁽²⁾` at both
/// policy sizes (edges agreeing within `edge_tol`), cross-checked against
/// the band-structure oracle when the potentials are separable.
pub fn locate_gap(family: &DislocationFamily, policy: &GapPolicy) -> Result<Vec<LocatedGap>> {
    let same = std::sync::Arc::ptr_eq(&family.v1, &family.v2);
    let sides: Vec<&dyn Sampler> = if same { vec![&*family.v1] } else { vec![&*family.v1, &*family.v2] };
    let e_min = -family.sup_norm() - 1.0;
    let mut common: Option<Vec<(f64, f64)>> = None;
    let mut detail: Vec<(f64, f64)> = Vec::new();
    let mut oracle: Option<Vec<(f64, f64)>> = Some(Vec::new());
    for (si, v) in sides.iter().enumerate() {
        // spurious gaps between the levels of one truncation halve in width
        // when the length doubles; genuine gaps keep theirs
        let mut scanned: Option<Vec<(f64, f64)>> = None;
        for len in [policy.sizes[0], 2.0 * policy.sizes[0]] {
            let op = truncation(*v, len, policy.res).context("gap scan truncation")?;
            let found = scan_gaps(&op, e_min, policy.e_max, policy.scan_step, policy.min_width)?;
            scanned = Some(match scanned {
                None => found,
                Some(prev) => intersect(&prev, &found).into_iter().filter(|g| g.1 - g.0 >= policy.min_width).collect(),
            });
        }
        let big = truncation(*v, policy.sizes[1], policy.res).context("gap refinement truncation")?;
        let mut agreed = Vec::new();
        for g in scanned.unwrap_or_default() {
            let f = refine_gap(&big, g, 4.0 * policy.edge_tol)?;
            if (f.0 - g.0).abs() <= policy.edge_tol && (f.1 - g.1).abs() <= policy.edge_tol {
                agreed.push(f);
                detail.push(g);
                detail.push(f);
            }
        }
        common = Some(match common {
            None => agreed,
            Some(c) => intersect(&c, &agreed),
        });
        let fl = floquet_gaps(*v, policy.res, e_min, policy.e_max)?;
        oracle = match (oracle, fl) {
            (Some(_), Some(f)) if si == 0 => Some(f),
            (Some(o), Some(f)) => Some(intersect(&o, &f)),
            _ => None,
        };
    }
    let gaps = common.unwrap_or_default();
    Ok(gaps
        .into_iter()
        .map(|(a, b)| {
            let floquet = oracle.as_ref().and_then(|o| {
                o.iter()
                    .copied()
                    .filter(|&(oa, ob)| ob > a && oa < b)
                    .max_by(|x, y| (x.1.min(b) - x.0.max(a)).total_cmp(&(y.1.min(b) - y.0.max(a))))
            });
            let per: Vec<(f64, f64)> = detail.iter().copied().filter(|&(da, db)| db > a && da < b).collect();
            LocatedGap { a, b, per_truncation: per, floquet }
        })
        .collect())
}

/// Checks that `[e − w, e + w]` is free of eigenvalues of truncations of
/// both `L + V⁽ᵏ⁾`; a configuration error otherwise.
pub fn check_gap_precondition(family: &DislocationFamily, gap: &GapSpec, res: Resolution, len: f64) -> Result<()> {
    let w = 1.5 * gap.alpha;
    for (k, v) in [(1, &family.v1), (2, &family.v2)] {
        let op = truncation(&**v, len, res)?;
        let lo = count(&op, gap.e - w)?;
        let hi = count(&op, gap.e + w)?;
        if lo != hi {
            return Err(Error::Config(format!(
                "no spectral gap around E = {}: L + V{k} has {} eigenvalues in [{}, {}] on a truncation of length {len}",
                gap.e,
                hi - lo,
                gap.e - w,
                gap.e + w
            )));
        }
    }
    Ok(())
}

/// Distance from `E` to the spectrum of the truncated `H₀` restricted to
/// the gap: band edges and eigenvalues localized near the interface.
/// Returns the distance and the interface eigenvalues found.
pub fn h0_distance(
    family: &DislocationFamily,
    a0: f64,
    b0: f64,
    e: f64,
    n: f64,
    res: Resolution,
) -> Result<(f64, Vec<f64>)> {
    let g = res.grid(-n, n)?;
    let field = sample_dislocation(family, 0.0, &g)?;
    let op = build_laplacian(&g).plus_potential(&field.values)?;
    let pad = 1e-6 * (b0 - a0);
    let spec = window_spectrum(&op, (a0 + pad, b0 - pad), 256)?;
    let xs = op.dof_x();
    let mut inner = Vec::new();
    for (lam, u) in spec.eigenvalues.iter().zip(spec.eigenvectors.as_ref().unwrap()) {
        let core: f64 = u.iter().zip(&xs).filter(|(_, x)| x.abs() < 0.5 * n).map(|(v, _)| v * v).sum();
        if core >= 0.5 {
            inner.push(*lam);
        }
    }
    let d = inner.iter().fold((e - a0).min(b0 - e), |m, l| m.min((l - e).abs()));
    Ok((d, inner))
}

// ---------------------------------------------------------------------------
// cut-offs

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    ChiPlus,
    ChiMinus,
    Phi,
    PsiPlus,
    PsiMinus,
}

/// C^∞ transition from 0 (u ≤ 0) to 1 (u ≥ 1).
pub fn smoothstep(u: f64) -> f64 {
    let f = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = f(u);
        a / (a + f(1.0 - u))
    }
}

/// Value of a cut-off at scale `n`.
pub fn cutoff(kind: CutoffKind, n: f64, x: f64) -> f64 {
    let chi_plus = |x: f64| smoothstep((x / n - 0.5) * 4.0);
    let phi = |x: f64| 1.0 - smoothstep((x.abs() / n - 0.25) * 4.0);
    match kind {
        CutoffKind::ChiPlus => chi_plus(x),
        CutoffKind::ChiMinus => chi_plus(-x),
        CutoffKind::Phi => phi(x),
        CutoffKind::PsiPlus => {
            if x >= 0.0 {
                1.0 - phi(x)
            } else {
                0.0
            }
        }
        CutoffKind::PsiMinus => {
            if x < 0.0 {
                1.0 - phi(x)
            } else {
                0.0
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CutoffProfile {
    pub kind: CutoffKind,
    pub n: f64,
    pub xs: Vec<f64>,
    pub samples: Vec<f64>,
}

impl CutoffProfile {
    pub fn new(kind: CutoffKind, n: f64, xs: &[f64]) -> Self {
        Self { kind, n, xs: xs.to_vec(), samples: xs.iter().map(|&x| cutoff(kind, n, x)).collect() }
    }
}

// ---------------------------------------------------------------------------
// corrections

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
}

/// `4β χ P χ` for one end, with `P` the spectral projection of `H_n^±`
/// onto `[E − 2β, E + 2β]`. `H_n^+` is realized on `(−n, n)` with `V⁽¹⁾`,
/// `H_n^−` on `ξ ∈ (−n, n)` with `V⁽²⁾(ξ)`.
#[derive(Clone, Debug)]
pub struct CorrectionTerm {
    pub side: Side,
    pub n: f64,
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
    /// orthonormal, on the host layout (lines at `−n + (i+1)·hx`)
    pub eigenfunctions: Vec<Vec<f64>>,
    pub cutoff: CutoffProfile,
    pub strength: f64,
    pub window: (f64, f64),
    pub res: Resolution,
}

/// `H_n^±` on its host truncation.
pub fn host_operator(side: Side, n: f64, family: &DislocationFamily, res: Resolution) -> Result<DiscreteOperator> {
    let g = res.grid(-n, n)?;
    let v: &dyn Sampler = match side {
        Side::Plus => &*family.v1,
        Side::Minus => &*family.v2,
    };
    let field = sample(v, &g)?;
    build_laplacian(&g).plus_potential(&field.values)
}

pub fn build_correction(
    side: Side,
    n: f64,
    family: &DislocationFamily,
    gap: &GapSpec,
    res: Resolution,
    max_rank: usize,
) -> Result<CorrectionTerm> {
    let host = host_operator(side, n, family, res)?;
    let window = gap.window();
    let spec = window_spectrum(&host, window, max_rank).map_err(|e| match e {
        Error::WindowOverflow { found, cap } => Error::Precondition(format!(
            "H_n at n = {n} has {found} eigenvalues in the correction window, above the rank cap {cap}; \
             the uniform bound on the window population looks violated"
        )),
        e => e,
    })?;
    let kind = match side {
        Side::Plus => CutoffKind::ChiPlus,
        Side::Minus => CutoffKind::ChiMinus,
    };
    Ok(CorrectionTerm {
        side,
        n,
        rank: spec.len(),
        eigenvalues: spec.eigenvalues.clone(),
        eigenfunctions: spec.eigenvectors.unwrap_or_default(),
        cutoff: CutoffProfile::new(kind, n, host.xs()),
        strength: 4.0 * gap.beta,
        window,
        res,
    })
}

impl CorrectionTerm {
    pub fn host_lines(&self) -> usize {
        self.cutoff.xs.len()
    }

    /// Host line index of the position `x` (`ξ` on the minus side).
    pub fn host_line(&self, x: f64) -> Option<usize> {
        let i = ((x + self.n) / self.res.hx).round() as isize - 1;
        (i >= 0 && (i as usize) < self.host_lines()).then_some(i as usize)
    }

    /// Terms `4β (χΦ_k)(χΦ_k)ᵀ` on the host layout, or `4β Φ_k Φ_kᵀ` when
    /// `with_cutoff` is false.
    pub fn host_terms(&self, with_cutoff: bool) -> Vec<LowRankTerm> {
        let ny = self.res.ny;
        self.eigenfunctions
            .iter()
            .map(|phi| {
                let mut u = phi.clone();
                if with_cutoff {
                    for (i, c) in self.cutoff.samples.iter().enumerate() {
                        u[i * ny..(i + 1) * ny].iter_mut().for_each(|v| *v *= c);
                    }
                }
                LowRankTerm { u, c: self.strength }
            })
            .collect()
    }

    /// Eigenvalues of `H_n^± + 4βP` left in the window; zero by construction.
    pub fn residual_window_count(&self, family: &DislocationFamily, with_cutoff: bool) -> Result<usize> {
        let host = host_operator(self.side, self.n, family, self.res)?.with_lowrank(self.host_terms(with_cutoff))?;
        let (lo, hi) = self.window;
        let eps = 1e-9 * (hi - lo);
        Ok(count(&host, hi + eps)? - count(&host, lo - eps)?)
    }

    /// `‖χPχ − P‖` in operator norm.
    pub fn chi_defect(&self) -> Result<f64> {
        if self.rank == 0 {
            return Ok(0.0);
        }
        let ny = self.res.ny;
        let chi_phi: Vec<Vec<f64>> = self
            .eigenfunctions
            .iter()
            .map(|phi| {
                let mut u = phi.clone();
                for (i, c) in self.cutoff.samples.iter().enumerate() {
                    u[i * ny..(i + 1) * ny].iter_mut().for_each(|v| *v *= c);
                }
                u
            })
            .collect();
        // orthonormal basis Q of span{Φ, χΦ}; the difference acts inside it
        let mut q: Vec<Vec<f64>> = Vec::new();
        for v in self.eigenfunctions.iter().chain(&chi_phi) {
            let mut w = v.clone();
            for _ in 0..2 {
                for b in &q {
                    let c: f64 = b.iter().zip(&w).map(|(x, y)| x * y).sum();
                    w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
                }
            }
            let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nw > 1e-10 {
                w.iter_mut().for_each(|x| *x /= nw);
                q.push(w);
            }
        }
        let r = q.len();
        let proj = |vs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            vs.iter().map(|v| q.iter().map(|b| b.iter().zip(v).map(|(x, y)| x * y).sum()).collect()).collect()
        };
        let a = proj(&chi_phi);
        let p = proj(&self.eigenfunctions);
        let mut m = faer::Mat::<f64>::zeros(r, r);
        for i in 0..r {
            for j in 0..r {
                let s: f64 = a.iter().map(|v| v[i] * v[j]).sum::<f64>() - p.iter().map(|v| v[i] * v[j]).sum::<f64>();
                m[(i, j)] = s;
            }
        }
        let ev = crate::eigensolve::dense_eigenvalues(&m)?;
        Ok(ev.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
    }
}

// ---------------------------------------------------------------------------
// the approximating operators

/// Potential on the interface line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceRule {
    /// `V⁽¹⁾(0, y)`, the pointwise value of the dislocated potential.
    Sample,
    /// Spacing-weighted mean of the two one-sided values, continuous in `t`.
    HalfCell,
}

/// `H̃_{n,t}` for a fixed `n`, with both corrections precomputed.
#[derive(Clone, Debug)]
pub struct Approximant {
    pub family: DislocationFamily,
    pub gap: GapSpec,
    pub n: f64,
    pub res: Resolution,
    pub plus: CorrectionTerm,
    pub minus: CorrectionTerm,
}

/// Offset below which the interface cell is merged into its neighbour.
const MERGE_FRACTION: f64 = 1e-6;

struct Layout {
    xs: Vec<f64>,
    /// host line of the minus correction for left lines, plus for right
    host: Vec<(Side, Option<usize>)>,
    pot: Vec<f64>,
    /// index of the line at x = 0
    interface: usize,
    /// index of the line at ξ = 0 (x = −t), if present
    left_cut: Option<usize>,
    uniform: bool,
}

impl Approximant {
    pub fn new(family: &DislocationFamily, gap: &GapSpec, n: f64, res: Resolution, max_rank: usize) -> Result<Self> {
        let cells = n / res.hx;
        if (cells - cells.round()).abs() > 1e-9 || n < 2.0 {
            return Err(Error::Config(format!(
                "n = {n} must be at least 2 and a multiple of hx = {} so the cut-offs stay clear of the interface",
                res.hx
            )));
        }
        let plus = build_correction(Side::Plus, n, family, gap, res, max_rank).context("plus-side correction")?;
        let minus = build_correction(Side::Minus, n, family, gap, res, max_rank).context("minus-side correction")?;
        Ok(Self { family: family.clone(), gap: *gap, n, res, plus, minus })
    }

    pub fn snap(&self, t: f64) -> f64 {
        self.res.snap(t)
    }

    fn layout(&self, t: f64, rule: InterfaceRule) -> Result<Layout> {
        if t < 0.0 {
            return Err(Error::Domain(format!("dislocation parameter must be nonnegative, got {t}")));
        }
        let hx = self.res.hx;
        let ny = self.res.ny;
        let nc = self.res.cells(self.n);
        let m = (t / hx + 1e-12).floor();
        let mut delta = t - m * hx;
        if delta < MERGE_FRACTION * hx || hx - delta < MERGE_FRACTION * hx {
            delta = 0.0;
        }
        let m = if delta == 0.0 { (t / hx).round() as usize } else { m as usize };
        // left lines ξ_i = −n + i·hx for i = 1..=left
        let left = if delta == 0.0 { nc + m - 1 } else { nc + m };
        let mut xs = Vec::with_capacity(left + nc);
        let mut host = Vec::with_capacity(left + nc);
        let mut pot = Vec::with_capacity((left + nc) * ny);
        let tt = if delta == 0.0 { m as f64 * hx } else { t };
        let mut left_cut = None;
        for i in 1..=left {
            let xi = -self.n + i as f64 * hx;
            if i == nc {
                left_cut = Some(xs.len());
            }
            xs.push(xi - tt);
            host.push((Side::Minus, (i - 1 < self.minus.host_lines()).then_some(i - 1)));
            for j in 0..ny {
                pot.push(self.family.v2.value(xi, j as f64 * self.res.hy())?);
            }
        }
        let interface = xs.len();
        for j in 0..nc {
            let x = j as f64 * hx;
            xs.push(x);
            host.push((Side::Plus, Some(nc + j - 1)));
            for k in 0..ny {
                let y = k as f64 * self.res.hy();
                let v1 = self.family.v1.value(x, y)?;
                let v = if j == 0 && rule == InterfaceRule::HalfCell {
                    let hm = if interface > 0 { -xs[interface - 1] } else { self.n + tt };
                    let v2 = self.family.v2.value(tt, y)?;
                    (hm * v2 + hx * v1) / (hm + hx)
                } else {
                    v1
                };
                pot.push(v);
            }
        }
        if m == 0 && delta == 0.0 {
            left_cut = Some(interface);
        }
        Ok(Layout { xs, host, pot, interface, left_cut, uniform: delta == 0.0 })
    }

    fn corrections_on(&self, lay: &Layout) -> Vec<LowRankTerm> {
        let ny = self.res.ny;
        let len = lay.xs.len() * ny;
        let mut terms = Vec::new();
        for corr in [&self.plus, &self.minus] {
            for phi in &corr.eigenfunctions {
                let mut u = vec![0.0; len];
                for (line, &(side, h)) in lay.host.iter().enumerate() {
                    if side != corr.side {
                        continue;
                    }
                    let Some(h) = h else { continue };
                    let c = corr.cutoff.samples[h];
                    if c == 0.0 {
                        continue;
                    }
                    for j in 0..ny {
                        u[line * ny + j] = c * phi[h * ny + j];
                    }
                }
                terms.push(LowRankTerm { u, c: corr.strength });
            }
        }
        terms
    }

    fn assemble(&self, t: f64, rule: InterfaceRule, corrections: bool) -> Result<(DiscreteOperator, Layout)> {
        let lay = self.layout(t, rule)?;
        let tt = if lay.uniform { self.snap(t) } else { t };
        let (lo, hi) = (-self.n - tt, self.n);
        let op = if lay.uniform && rule == InterfaceRule::Sample {
            let g = TubeGrid::with_spacing(lo, hi, self.res.hx, self.res.ny)?;
            build_laplacian(&g).plus_potential(&lay.pot)?
        } else {
            let (xd, tx) = lumped_x(&lay.xs, lo, hi);
            DiscreteOperator::from_lines(lay.xs.clone(), self.res.ny, self.res.hy(), &xd, tx, None, &lay.pot, (lo, hi))?
        };
        let op = if corrections { op.with_lowrank(self.corrections_on(&lay))? } else { op };
        Ok((op, lay))
    }

    /// `H̃_{n,t}`. With [`InterfaceRule::Sample`] `t` is snapped to the grid.
    pub fn operator(&self, t: f64, rule: InterfaceRule) -> Result<DiscreteOperator> {
        let t = if rule == InterfaceRule::Sample { self.snap(t) } else { t };
        Ok(self.assemble(t, rule, true)?.0)
    }

    /// The truncated `H_t` on `(−n−t, n)`, i.e. `H̃_{n,t}` without corrections.
    pub fn stripped(&self, t: f64) -> Result<DiscreteOperator> {
        Ok(self.assemble(self.snap(t), InterfaceRule::Sample, false)?.0)
    }

    /// `H̃_{n,t;dec}`: Dirichlet lines at `x = 0` and `x = −t`.
    pub fn decoupled(&self, t: f64) -> Result<DiscreteOperator> {
        let (op, lay) = self.assemble(self.snap(t), InterfaceRule::Sample, true)?;
        let mut op = op.cut_line(lay.interface);
        if let Some(k) = lay.left_cut {
            op = op.cut_line(k);
        }
        Ok(op)
    }

    /// `h̃_{n,t;1}` assembled on its own, on `ξ ∈ (−n, 0)`.
    pub fn left_part(&self) -> Result<DiscreteOperator> {
        let g = self.res.grid(-self.n, 0.0)?;
        let field = sample(&*self.family.v2, &g)?;
        let op = build_laplacian(&g).plus_potential(&field.values)?;
        let terms = part_terms(&self.minus, &g);
        op.with_lowrank(terms)
    }

    /// `h̃_{n;3}` assembled on its own, on `(0, n)`.
    pub fn right_part(&self) -> Result<DiscreteOperator> {
        let g = self.res.grid(0.0, self.n)?;
        let field = sample(&*self.family.v1, &g)?;
        let op = build_laplacian(&g).plus_potential(&field.values)?;
        let terms = part_terms(&self.plus, &g);
        op.with_lowrank(terms)
    }

    /// `#{λ < E}` of `H̃_{n,t}` (snapped `t`).
    pub fn count(&self, t: f64) -> Result<usize> {
        count(&self.operator(t, InterfaceRule::Sample)?, self.gap.e)
    }

    pub fn count_rule(&self, t: f64, rule: InterfaceRule) -> Result<usize> {
        count(&self.operator(t, rule)?, self.gap.e)
    }
}

fn part_terms(corr: &CorrectionTerm, g: &TubeGrid) -> Vec<LowRankTerm> {
    let ny = g.ny;
    corr.eigenfunctions
        .iter()
        .map(|phi| {
            let mut u = vec![0.0; g.dim()];
            for line in 0..g.lines() {
                if let Some(h) = corr.host_line(g.line_x(line)) {
                    let c = corr.cutoff.samples[h];
                    for j in 0..ny {
                        u[line * ny + j] = c * phi[h * ny + j];
                    }
                }
            }
            LowRankTerm { u, c: corr.strength }
        })
        .collect()
}

/// Free-standing form of [`Approximant::operator`] for snapped `t`.
pub fn assemble_approximant(
    n: f64,
    t: f64,
    family: &DislocationFamily,
    gap: &GapSpec,
    res: Resolution,
) -> Result<DiscreteOperator> {
    Approximant::new(family, gap, n, res, 64)?.operator(t, InterfaceRule::Sample)
}

// ---------------------------------------------------------------------------
// interface states and localization

/// `#{λ < E}` of the Dirichlet segment `L_(0,t) + V⁽²⁾` (t snapped).
pub fn interface_state_count(t: f64, family: &DislocationFamily, e: f64, res: Resolution) -> Result<usize> {
    match segment_operator(t, family, res)? {
        None => Ok(0),
        Some(op) => count(&op, e),
    }
}

/// `L_(0,t) + V⁽²⁾` on the ξ grid, `None` when no interior line fits.
pub fn segment_operator(t: f64, family: &DislocationFamily, res: Resolution) -> Result<Option<DiscreteOperator>> {
    if t <= 0.0 {
        return Err(Error::Domain(format!("segment length must be positive, got {t}")));
    }
    let m = res.cells(t);
    if m < 2 {
        return Ok(None);
    }
    let hx = res.hx;
    let xs: Vec<f64> = (1..m).map(|i| i as f64 * hx).collect();
    let ny = res.ny;
    let mut pot = Vec::with_capacity(xs.len() * ny);
    for &x in &xs {
        for j in 0..ny {
            pot.push(family.v2.value(x, j as f64 * res.hy())?);
        }
    }
    let h2 = 1.0 / (hx * hx);
    let nl = xs.len();
    Ok(Some(DiscreteOperator::from_lines(
        xs,
        ny,
        res.hy(),
        &vec![2.0 * h2; nl],
        vec![h2; nl - 1],
        None,
        &pot,
        (0.0, m as f64 * hx),
    )?))
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalizationProfile {
    pub m: Vec<f64>,
    /// `‖u restricted to |x − x0| > m‖`
    pub tail: Vec<f64>,
    /// first `m` with tail mass at most 1/4
    pub m0: Option<f64>,
}

/// Tail masses of a normalized vector around `x0`, sampled every `step`.
pub fn localization_profile(u: &[f64], dof_x: &[f64], x0: f64, step: f64) -> LocalizationProfile {
    assert_eq!(u.len(), dof_x.len());
    let reach = dof_x.iter().fold(0.0f64, |m, x| m.max((x - x0).abs()));
    let norm2: f64 = u.iter().map(|v| v * v).sum();
    let mut ms = Vec::new();
    let mut tails = Vec::new();
    let mut m = 0.0;
    while m <= reach + step {
        let t: f64 = u.iter().zip(dof_x).filter(|(_, x)| (*x - x0).abs() > m).map(|(v, _)| v * v).sum();
        ms.push(m);
        tails.push((t / norm2.max(f64::MIN_POSITIVE)).sqrt());
        m += step;
    }
    let m0 = ms.iter().zip(&tails).find(|(_, t)| **t <= 0.25).map(|(m, _)| *m);
    // a vector whose tail only drops below 1/4 at the edge of the domain
    // is not localized
    let m0 = m0.filter(|&m| m < 0.9 * reach);
    LocalizationProfile { m: ms, tail: tails, m0 }
}

// ---------------------------------------------------------------------------
// the sweep

#[derive(Clone, Debug, Serialize)]
pub struct SweepSample {
    pub t: f64,
    pub count_below_e: usize,
    pub gap_eigenvalues: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Crossing {
    pub tau: f64,
    pub bracket: (f64, f64),
    /// eigenvalue of `H̃_{n,τ}` nearest to `E`
    pub eigenvalue: f64,
    pub residual: f64,
    /// +1 when the count below `E` grows across the crossing
    pub direction: i32,
    pub count_jump: i64,
    #[serde(skip)]
    pub eigenvector: Vec<f64>,
    #[serde(skip)]
    pub dof_x: Vec<f64>,
}

impl Crossing {
    pub fn distance_to(&self, e: f64) -> f64 {
        (self.eigenvalue - e).abs()
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EigBranch {
    /// `(t, eigenvalue, multiplicity)`
    pub samples: Vec<(f64, f64, usize)>,
    pub crossing_params: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub n: f64,
    pub gap: GapSpec,
    pub samples: Vec<SweepSample>,
    pub crossings: Vec<Crossing>,
    pub branch: EigBranch,
    /// `E` was already an eigenvalue of `H₀`
    pub tau_zero: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SweepOptions {
    pub t_min: f64,
    pub t_max: f64,
    /// record the gap eigenvalues of every sample (one window solve per t)
    pub gap_eigenvalues: bool,
    /// refine crossings to this t accuracy
    pub t_tol: f64,
}

impl SweepOptions {
    pub fn new(t_max: f64) -> Self {
        Self { t_min: 0.0, t_max, gap_eigenvalues: true, t_tol: 1e-11 }
    }
}

/// Eigenpair of `op` nearest to `e`.
fn nearest_pair(op: &DiscreteOperator, e: f64, reach: f64) -> Result<(f64, f64, Vec<f64>)> {
    let mut w = 1e-5f64.min(reach);
    loop {
        let s: SpectralResult = window_spectrum(op, (e - w, e + w), 64)?;
        if !s.is_empty() {
            let k = (0..s.len()).min_by(|&a, &b| (s.eigenvalues[a] - e).abs().total_cmp(&(s.eigenvalues[b] - e).abs())).unwrap();
            return Ok((s.eigenvalues[k], s.residuals[k], s.eigenvectors.unwrap().swap_remove(k)));
        }
        if w >= reach {
            return Err(Error::NoConvergence(format!("no eigenvalue within {reach} of {e}")));
        }
        w = (w * 10.0).min(reach);
    }
}

impl Approximant {
    /// Refines a count change between `a` and `b` to a parameter `τ` at
    /// which `H̃_{n,τ}` has `E` as an eigenvalue up to `t_tol`.
    pub fn refine_crossing(&self, a: f64, b: f64, t_tol: f64) -> Result<Crossing> {
        let rule = InterfaceRule::HalfCell;
        let hx = self.res.hx;
        let (mut lo, mut hi) = (a, b);
        let mut clo = self.count_rule(lo, rule)?;
        let mut chi = self.count_rule(hi, rule)?;
        // the sampled and the continuous interface rule can disagree about
        // which cell holds the crossing
        let mut grow = 0;
        while clo == chi && grow < 3 {
            grow += 1;
            lo = (lo - hx).max(0.0);
            hi += hx;
            clo = self.count_rule(lo, rule)?;
            chi = self.count_rule(hi, rule)?;
        }
        if clo == chi {
            return Err(Error::NoCrossing { t_min: lo, t_max: hi });
        }
        let bracket = (lo, hi);
        let (c_lo, c_hi) = (clo, chi);
        for _ in 0..200 {
            if hi - lo <= t_tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.count_rule(mid, rule)? == c_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tau = 0.5 * (lo + hi);
        let op = self.operator(tau, rule)?;
        let (lam, res, vec) = nearest_pair(&op, self.gap.e, self.gap.beta)?;
        Ok(Crossing {
            tau,
            bracket,
            eigenvalue: lam,
            residual: res,
            direction: if c_hi > c_lo { 1 } else { -1 },
            count_jump: c_hi as i64 - c_lo as i64,
            eigenvector: vec,
            dof_x: op.dof_x(),
        })
    }

    /// Eigenvalues of `H̃_{n,t}` strictly inside the gap.
    pub fn gap_eigenvalues(&self, t: f64) -> Result<Vec<f64>> {
        let op = self.operator(t, InterfaceRule::Sample)?;
        let pad = 1e-9 * (self.gap.b0 - self.gap.a0);
        Ok(window_spectrum(&op, (self.gap.a0 + pad, self.gap.b0 - pad), 512)?.eigenvalues)
    }

    /// Tracks `N(t) = #{λ(H̃_{n,t}) < E}` on `t ∈ hx·ℕ ∩ [t_min, t_max]` and
    /// refines every change of `N` to a crossing.
    pub fn sweep(&self, opts: &SweepOptions, tau_zero: bool) -> Result<SweepResult> {
        let hx = self.res.hx;
        let k0 = (opts.t_min / hx).round() as usize + usize::from(tau_zero && opts.t_min == 0.0);
        let k1 = (opts.t_max / hx).round() as usize;
        let ts: Vec<f64> = (k0..=k1).map(|k| k as f64 * hx).collect();
        let samples: Vec<SweepSample> = par::map(&ts, |&t| -> Result<SweepSample> {
            Ok(SweepSample {
                t,
                count_below_e: self.count(t)?,
                gap_eigenvalues: if opts.gap_eigenvalues { self.gap_eigenvalues(t)? } else { Vec::new() },
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let brackets: Vec<(f64, f64)> = samples
            .windows(2)
            .filter(|w| w[0].count_below_e != w[1].count_below_e)
            .map(|w| (w[0].t, w[1].t))
            .collect();
        let refined: Vec<Result<Crossing>> = par::map(&brackets, |&(a, b)| self.refine_crossing(a, b, opts.t_tol));
        let mut crossings = Vec::new();
        for r in refined {
            match r {
                Ok(c) => crossings.push(c),
                Err(Error::NoCrossing { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        crossings.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        crossings.dedup_by(|a, b| (a.tau - b.tau).abs() < 1e-9);
        let e = self.gap.e;
        let mut branch = EigBranch::default();
        if tau_zero {
            branch.crossing_params.push(0.0);
        }
        branch.crossing_params.extend(crossings.iter().map(|c| c.tau));
        for s in &samples {
            if let Some(&lam) = s.gap_eigenvalues.iter().min_by(|a, b| (*a - e).abs().total_cmp(&(*b - e).abs())) {
                let mult = s.gap_eigenvalues.iter().filter(|&&l| (l - lam).abs() <= 1e-8 * lam.abs().max(1.0)).count();
                branch.samples.push((s.t, lam, mult));
            }
        }
        if samples.first().map(|s| s.count_below_e) == samples.last().map(|s| s.count_below_e) && crossings.is_empty() {
            return Err(Error::NoCrossing { t_min: opts.t_min, t_max: opts.t_max });
        }
        Ok(SweepResult { n: self.n, gap: self.gap, samples, crossings, branch, tau_zero })
    }
}

/// Builds `H̃_{n,·}` for `family` and sweeps `t ∈ [0, t_max]`.
pub fn sweep_dislocation(
    gap: &GapSpec,
    family: &DislocationFamily,
    n: f64,
    t_max: f64,
    res: Resolution,
) -> Result<SweepResult> {
    check_gap_precondition(family, gap, res, 2.0 * n)?;
    let (dist, _) = h0_distance(family, gap.a0, gap.b0, gap.e, n, res)?;
    let tau_zero = dist < 1e-8 * gap.e.abs().max(1.0);
    let approx = Approximant::new(family, gap, n, res, 64)?;
    approx.sweep(&SweepOptions::new(t_max), tau_zero)
}

// ---------------------------------------------------------------------------
// counting chain

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ChainSample {
    pub t: f64,
    pub n_full: usize,
    pub n_dec: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n_dec0: usize,
}

impl ChainSample {
    /// `N_full ≥ N_dec = N1 + N2 + N3` and `N1 + N3 = N_dec(0)`.
    pub fn holds(&self) -> bool {
        self.n_full >= self.n_dec && self.n_dec == self.n1 + self.n2 + self.n3 && self.n1 + self.n3 == self.n_dec0
    }
}

impl Approximant {
    pub fn chain(&self, ts: &[f64]) -> Result<Vec<ChainSample>> {
        let e = self.gap.e;
        let n1 = count(&self.left_part()?, e)?;
        let n3 = count(&self.right_part()?, e)?;
        let n_dec0 = count(&self.decoupled(0.0)?, e)?;
        par::map(ts, |&t| -> Result<ChainSample> {
            let t = self.snap(t);
            Ok(ChainSample {
                t,
                n_full: self.count(t)?,
                n_dec: count(&self.decoupled(t)?, e)?,
                n1,
                n2: if t > 0.0 { interface_state_count(t, &self.family, e, self.res)? } else { 0 },
                n3,
                n_dec0,
            })
        })
        .into_iter()
        .collect()
    }

    /// `(N(H̃_{n,0}), N(H̃_{n,0;dec}))`; their difference is the `c₀` of the
    /// sandwich.
    pub fn sandwich(&self) -> Result<(usize, usize)> {
        Ok((self.count(0.0)?, count(&self.decoupled(0.0)?, self.gap.e)?))
    }

    /// Eigenvalues of `H̃_{n,0}` in `(E − β, E + β)`; none for `n` large.
    pub fn spectral_hole(&self) -> Result<usize> {
        let op = self.operator(0.0, InterfaceRule::Sample)?;
        let b = self.gap.beta;
        Ok(count(&op, self.gap.e + b)? - count(&op, self.gap.e - b)?)
    }
}
