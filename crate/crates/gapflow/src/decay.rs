//! Exponential decay of gap eigenstates, Dirichlet decoupling estimates and
//! the Combes–Thomas probe.

use std::sync::Arc;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::eigensolve::{dense_eigenvalues, inertia_count_perturbed, DEFAULT_DENSE_CAP};
use crate::error::{Error, Result};
use crate::gap::{floquet_gaps, GapSpec};
use crate::grid::Resolution;
use crate::linalg::bk::BkFactor;
use crate::linalg::ShiftedFactor;
use crate::operator::{periodic_layout, DiscreteOperator};
use crate::par;
use crate::potential::{Preset, Sampler};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares line `y ≈ c + s·x`; returns `(c, s, rms residual)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let s = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let c = my - s * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - c - s * a).powi(2)).sum::<f64>() / n).sqrt();
    (c, s, rms)
}

// ---------------------------------------------------------------------------
// decay of eigenstates

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub c: f64,
    pub gamma: f64,
    /// rms residual of the fit of `ln ‖(1 − χ_k) u‖`
    pub fit_residual: f64,
    pub k_range: (usize, usize),
    /// decades the tail mass falls across `k_range`
    pub decades: f64,
    pub accepted: bool,
    pub tail: Vec<(usize, f64)>,
}

/// Tail masses below this are dominated by eigenvector round-off.
const TAIL_FLOOR: f64 = 1e-8;
const MAX_RESIDUAL: f64 = 0.1;
const MIN_DECADES: f64 = 2.0;

/// Fits `‖(1 − χ_k) u‖ ≈ C e^{−γk}`, `χ_k` the indicator of `|x − x0| ≤ k`,
/// over integer `k` between 1 and 3/4 of the distance to the far end,
/// stopping where the tail reaches round-off.
pub fn decay_fit(u: &[f64], dof_x: &[f64], interface_x: f64) -> DecayFit {
    assert_eq!(u.len(), dof_x.len());
    let total = dot(u, u).max(f64::MIN_POSITIVE);
    let reach = dof_x.iter().fold(0.0f64, |m, x| m.max((x - interface_x).abs()));
    let k_max = (0.75 * reach).floor() as usize;
    let mut tail = Vec::new();
    for k in 1..=k_max.max(1) {
        let t: f64 = u
            .iter()
            .zip(dof_x)
            .filter(|(_, x)| (*x - interface_x).abs() > k as f64)
            .map(|(v, _)| v * v)
            .sum();
        let t = (t / total).sqrt();
        if t < TAIL_FLOOR {
            break;
        }
        tail.push((k, t));
    }
    if tail.len() < 3 {
        return DecayFit {
            c: f64::NAN,
            gamma: 0.0,
            fit_residual: f64::INFINITY,
            k_range: (1, tail.len()),
            decades: 0.0,
            accepted: false,
            tail,
        };
    }
    let xs: Vec<f64> = tail.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.1.ln()).collect();
    let (c, s, rms) = fit_line(&xs, &ys);
    let decades = (tail[0].1 / tail.last().unwrap().1).log10();
    let gamma = -s;
    DecayFit {
        c: c.exp(),
        gamma,
        fit_residual: rms,
        k_range: (tail[0].0, tail.last().unwrap().0),
        decades,
        accepted: gamma > 0.0 && rms < MAX_RESIDUAL && decades >= MIN_DECADES,
        tail,
    }
}

// ---------------------------------------------------------------------------
// resolvent differences

/// `‖(H + r)⁻¹ − (H_cut + r)⁻¹‖_HS` for a Dirichlet cut on the line nearest
/// `cut_x`.
///
/// Removing the nodes `K` of the cut line gives, with `G = (H + r)⁻¹`,
/// `G − (H_cut + r)⁻¹ = G_{·K} G_{KK}⁻¹ G_{K·}` (the cut inverse extended by
/// zero), so only `|K|` solves are needed. The continuum kernel is the matrix
/// entry over the cell measure `hx·hy` and the quadrature weight of the double
/// integral is its square, so the matrix Frobenius norm is the continuum
/// Hilbert–Schmidt norm.
pub fn resolvent_hs_diff(op: &DiscreteOperator, cut_x: f64, r: f64) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(Error::Domain(format!("resolvent shift r must be at least 1, got {r}")));
    }
    let k = op.snap_line(cut_x)?;
    let Some(off) = op.offsets()[k] else { return Ok(0.0) };
    let ny = op.ny();
    let f = ShiftedFactor::new(op, -r, true).map_err(|e| match e {
        Error::NearSingular { .. } => Error::Precondition(format!("H + {r} is singular; H is not bounded below by -r")),
        e => e,
    })?;
    let dim = op.dim();
    let cols: Vec<Vec<f64>> = par::map_range(ny, |j| {
        let mut e = vec![0.0; dim];
        e[off + j] = 1.0;
        f.solve(&mut e);
        e
    });
    let mut gkk = vec![0.0; ny * ny];
    let mut m = vec![0.0; ny * ny];
    for a in 0..ny {
        for b in 0..ny {
            gkk[a * ny + b] = 0.5 * (cols[a][off + b] + cols[b][off + a]);
            m[a * ny + b] = dot(&cols[a], &cols[b]);
        }
    }
    // A = G_KK⁻¹ M, HS² = tr(A A)
    let g = BkFactor::new(gkk, ny);
    let mut a = vec![0.0; ny * ny];
    for b in 0..ny {
        let mut col: Vec<f64> = (0..ny).map(|i| m[i * ny + b]).collect();
        g.solve(&mut col);
        for i in 0..ny {
            a[i * ny + b] = col[i];
        }
    }
    let mut hs2 = 0.0;
    for i in 0..ny {
        for j in 0..ny {
            hs2 += a[i * ny + j] * a[j * ny + i];
        }
    }
    Ok(hs2.max(0.0).sqrt())
}

// ---------------------------------------------------------------------------
// ensembles

/// A family of potentials sharing one gap, with the target energy in it.
#[derive(Clone, Debug, Serialize)]
pub struct GappedEnsemble {
    pub members: Vec<Preset>,
    pub reference: Preset,
    pub gap: GapSpec,
}

impl GappedEnsemble {
    pub fn samplers(&self) -> Vec<Arc<dyn Sampler>> {
        self.members.iter().map(|p| Arc::new(p.clone()) as Arc<dyn Sampler>).collect()
    }

    /// Every member scaled by `s`.
    pub fn scaled(&self, s: f64) -> Result<Vec<Preset>> {
        self.members.iter().map(|p| scaled(p, s)).collect()
    }
}

/// Nonnegative lattice potentials `a(1 + cos 2π(x − px))(1 + b cos 2π(y − py))`
/// with `a` near 2. The gap is the first band gap of the separable reference
/// `2(1 + cos 2πx)`; `E` is its midpoint and `α` an eighth of its width, so
/// members only need to keep the central half `[E − 2α, E + 2α]` free.
pub fn gapped_ensemble(seed: u64, size: usize, res: Resolution) -> Result<GappedEnsemble> {
    let reference = Preset::Lattice { a: 2.0, b: 0.0, px: 0.0, py: 0.0 };
    let gaps = floquet_gaps(&reference, res, -1.0, 40.0)?
        .ok_or_else(|| Error::Config("reference potential has no band-structure oracle".into()))?;
    let &(a0, b0) = gaps
        .iter()
        .find(|g| g.1 - g.0 >= 0.5)
        .ok_or_else(|| Error::Config("reference potential has no gap of width 0.5 below 40".into()))?;
    let e = 0.5 * (a0 + b0);
    let alpha = 0.125 * (b0 - a0);
    let gap = GapSpec::new(a0, b0, e, alpha, 2.0 * alpha / 3.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members = (0..size)
        .map(|_| Preset::Lattice {
            a: rng.random_range(1.8..2.2),
            b: rng.random_range(-0.3..0.3),
            px: rng.random_range(0.0..1.0),
            py: rng.random_range(0.0..1.0),
        })
        .collect();
    Ok(GappedEnsemble { members, reference, gap })
}

/// `s·W` for the presets that scale linearly.
pub fn scaled(p: &Preset, s: f64) -> Result<Preset> {
    match p {
        Preset::Lattice { a, b, px, py } => Ok(Preset::Lattice { a: a * s, b: *b, px: *px, py: *py }),
        Preset::Mathieu { q, phase } => Ok(Preset::Mathieu { q: q * s, phase: *phase }),
        Preset::Constant { c } => Ok(Preset::Constant { c: c * s }),
        other => Err(Error::Config(format!("scaling is not defined for {other:?}"))),
    }
}

/// `L + W` on an x-periodic ring of `len` starting at `x0`.
pub fn ring_operator(w: &dyn Sampler, x0: f64, len: f64, res: Resolution) -> Result<DiscreteOperator> {
    let nxl = res.cells(len);
    let hy = res.hy();
    let mut pot = Vec::with_capacity(nxl * res.ny);
    for i in 0..nxl {
        let x = x0 + i as f64 * res.hx;
        for j in 0..res.ny {
            pot.push(w.value(x, j as f64 * hy)?);
        }
    }
    periodic_layout(x0, res.hx, nxl, res.ny, hy, &pot)
}

// ---------------------------------------------------------------------------
// gap counts

#[derive(Clone, Debug, Serialize)]
pub struct GapCountMember {
    pub index: usize,
    pub label: String,
    pub uncut: usize,
    pub cut: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapCountReport {
    pub window: (f64, f64),
    pub ring_length: f64,
    pub members: Vec<GapCountMember>,
    pub skipped: Vec<(usize, String)>,
    pub max_count: usize,
}

fn window_count(op: &DiscreteOperator, lo: f64, hi: f64) -> Result<usize> {
    Ok(inertia_count_perturbed(op, hi)?.0 - inertia_count_perturbed(op, lo)?.0)
}

/// Largest number of eigenvalues in `[E − α, E + α]` created by one Dirichlet
/// cut, over the ensemble. Each member lives on a ring of length
/// `ring_length`; members with spectrum within `2α` of `E` before the cut
/// are skipped.
pub fn gap_count_probe(
    ensemble: &[Arc<dyn Sampler>],
    gap: &GapSpec,
    res: Resolution,
    ring_length: f64,
) -> Result<GapCountReport> {
    let window = (gap.e - gap.alpha, gap.e + gap.alpha);
    let rows: Vec<Result<std::result::Result<GapCountMember, (usize, String)>>> =
        par::map_range(ensemble.len(), |i| {
            let w = &ensemble[i];
            let ring = ring_operator(&**w, -0.5 * ring_length, ring_length, res)?;
            let (lo, hi) = (gap.e - 2.0 * gap.alpha, gap.e + 2.0 * gap.alpha);
            let uncut_gap = window_count(&ring, lo, hi)?;
            if uncut_gap != 0 {
                return Ok(Err((i, format!("{uncut_gap} eigenvalues inside [{lo}, {hi}] before the cut"))));
            }
            let cut = ring.insert_dirichlet_cut(0.0)?;
            Ok(Ok(GapCountMember {
                index: i,
                label: w.label(),
                uncut: window_count(&ring, window.0, window.1)?,
                cut: window_count(&cut, window.0, window.1)?,
            }))
        });
    let mut members = Vec::new();
    let mut skipped = Vec::new();
    for r in rows {
        match r? {
            Ok(m) => members.push(m),
            Err(s) => skipped.push(s),
        }
    }
    let max_count = members.iter().map(|m| m.cut).max().unwrap_or(0);
    Ok(GapCountReport { window, ring_length, members, skipped, max_count })
}

// ---------------------------------------------------------------------------
// spectral shift

#[derive(Clone, Debug, Serialize)]
pub struct SpectralShiftReport {
    /// added to both operators so that `T ≥ 1`
    pub shift: f64,
    pub e: f64,
    pub count_t: usize,
    pub count_s: usize,
    pub dist: f64,
    pub hs2: f64,
    /// `count_t − dist⁻² ‖T⁻¹ − S⁻¹‖²_HS`
    pub lower_bound: f64,
    pub holds: bool,
    /// the same inequality for `A = (T+1)⁻¹`, `B = (S+1)⁻¹` at `η = (E+1)⁻¹`
    pub resolvent_dist: f64,
    pub resolvent_hs2: f64,
    pub resolvent_lower_bound: f64,
    pub resolvent_holds: bool,
}

fn dense_inverse(m: &Mat<f64>) -> Mat<f64> {
    let n = m.nrows();
    let v: Vec<f64> = (0..n * n).map(|k| m[(k / n, k % n)]).collect();
    let inv = BkFactor::new(v, n).inverse();
    Mat::from_fn(n, n, |i, j| inv[i * n + j])
}

/// Checks `N(S; E) ≥ N(T; E) − dist(E, σ(T))⁻² ‖T⁻¹ − S⁻¹‖²_HS` densely for
/// `T = op_t + s`, `S = op_s + s`, where `op_s` is `op_t` with additional
/// Dirichlet cuts (its inverse is extended by zero on the cut nodes) and `s`
/// makes `T ≥ 1`.
pub fn spectral_shift_probe(op_t: &DiscreteOperator, op_s: &DiscreteOperator, e: f64) -> Result<SpectralShiftReport> {
    if op_t.full_len() != op_s.full_len() || op_t.ny() != op_s.ny() {
        return Err(Error::Domain("spectral shift probe needs two operators on one layout".into()));
    }
    let n = op_t.dim();
    if n > DEFAULT_DENSE_CAP {
        return Err(Error::Capacity { dim: n, cap: DEFAULT_DENSE_CAP });
    }
    let ot = op_t.offsets();
    let os = op_s.offsets();
    let ny = op_t.ny();
    // position in T's active vector of each active node of S
    let mut map = Vec::with_capacity(op_s.dim());
    for (a, b) in ot.iter().zip(&os) {
        match (a, b) {
            (Some(a), Some(_)) => map.extend(*a..*a + ny),
            (None, Some(_)) => return Err(Error::Domain("S keeps a line that T has cut".into())),
            _ => {}
        }
    }
    let mt = op_t.to_dense();
    let ms = op_s.to_dense();
    let mut ev_t = dense_eigenvalues(&mt)?;
    ev_t.sort_by(f64::total_cmp);
    let lmin = ev_t.first().copied().unwrap_or(0.0);
    let shift = 1.0 - lmin.min(0.0);
    let e_t = e + shift;
    let tm = Mat::from_fn(n, n, |i, j| mt[(i, j)] + if i == j { shift } else { 0.0 });
    let ns = op_s.dim();
    let sm = Mat::from_fn(ns, ns, |i, j| ms[(i, j)] + if i == j { shift } else { 0.0 });
    let ti = dense_inverse(&tm);
    let si = dense_inverse(&sm);
    let mut d = ti.clone();
    for a in 0..ns {
        for b in 0..ns {
            d[(map[a], map[b])] -= si[(a, b)];
        }
    }
    let dev = dense_eigenvalues(&d)?;
    let dmax = dev.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let dmin = dev.iter().copied().fold(f64::INFINITY, f64::min);
    if dmin < -1e-9 * dmax {
        return Err(Error::Domain(format!("form order T <= S violated: T^-1 - S^-1 has eigenvalue {dmin:e}")));
    }
    let hs2: f64 = dev.iter().map(|v| v * v).sum();
    let ev_t: Vec<f64> = ev_t.iter().map(|v| v + shift).collect();
    let mut ev_s = dense_eigenvalues(&sm)?;
    ev_s.sort_by(f64::total_cmp);
    let dist = ev_t.iter().fold(f64::INFINITY, |m, l| m.min((l - e_t).abs()));
    if dist <= 1e-12 * e_t.abs().max(1.0) {
        return Err(Error::Domain(format!("E = {e} lies in the spectrum of T")));
    }
    let count_t = ev_t.partition_point(|&l| l < e_t);
    let count_s = ev_s.partition_point(|&l| l < e_t);
    let lower_bound = count_t as f64 - hs2 / (dist * dist);

    // A − B = (T+1)⁻¹ − (S+1)⁻¹ has eigenvalues that are not simple
    // functions of those of D, so it is formed explicitly
    let t1 = Mat::from_fn(n, n, |i, j| tm[(i, j)] + if i == j { 1.0 } else { 0.0 });
    let s1 = Mat::from_fn(ns, ns, |i, j| sm[(i, j)] + if i == j { 1.0 } else { 0.0 });
    let mut ab = dense_inverse(&t1);
    let bi = dense_inverse(&s1);
    for a in 0..ns {
        for b in 0..ns {
            ab[(map[a], map[b])] -= bi[(a, b)];
        }
    }
    let resolvent_hs2: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| ab[(i, j)].powi(2)).sum();
    let eta = 1.0 / (e_t + 1.0);
    let resolvent_dist = ev_t.iter().fold(f64::INFINITY, |m, l| m.min((1.0 / (l + 1.0) - eta).abs()));
    let resolvent_lower_bound = count_t as f64 - resolvent_hs2 / (resolvent_dist * resolvent_dist);
    Ok(SpectralShiftReport {
        shift,
        e,
        count_t,
        count_s,
        dist,
        hs2,
        lower_bound,
        holds: count_s as f64 >= lower_bound,
        resolvent_dist,
        resolvent_hs2,
        resolvent_lower_bound,
        resolvent_holds: count_s as f64 >= resolvent_lower_bound,
    })
}

// ---------------------------------------------------------------------------
// Combes–Thomas

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CombesThomasProbe {
    pub eps0: f64,
    pub lambda: f64,
    pub k: usize,
    pub measured_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CombesThomasReport {
    pub probes: Vec<CombesThomasProbe>,
    pub eps0: f64,
    pub c1: f64,
    pub monotone: bool,
}

/// `‖(1 − χ_{2k}) (H − λ)⁻¹ χ_k‖` for each `k`, with `χ_k` the indicator of
/// `|x − center| ≤ k`, by power iteration on the compressed block.
pub fn combes_thomas_probe(op: &DiscreteOperator, lambda: f64, k_list: &[usize], center: f64) -> Result<CombesThomasReport> {
    let norm = op.norm_bound().max(1.0);
    let delta = 1e-6 * norm;
    let near = inertia_count_perturbed(op, lambda + delta)?.0 - inertia_count_perturbed(op, lambda - delta)?.0;
    if near > 0 {
        return Err(Error::Precondition(format!("lambda = {lambda} is within {delta:e} of the spectrum")));
    }
    let f = ShiftedFactor::new(op, lambda, true).map_err(|e| match e {
        Error::NearSingular { .. } => Error::Precondition(format!("resolvent at lambda = {lambda} is ill-conditioned")),
        e => e,
    })?;
    let xs = op.dof_x();
    let dim = op.dim();
    let norms: Vec<f64> = par::map(k_list, |&k| {
        let inner: Vec<bool> = xs.iter().map(|x| (x - center).abs() <= k as f64).collect();
        let outer: Vec<bool> = xs.iter().map(|x| (x - center).abs() > 2.0 * k as f64).collect();
        if !inner.iter().any(|&b| b) || !outer.iter().any(|&b| b) {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xc7 + k as u64);
        let mut v: Vec<f64> = (0..dim).map(|i| if inner[i] { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
        let mut sigma = 0.0;
        for _ in 0..500 {
            let nv = dot(&v, &v).sqrt();
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            let mut w = v.clone();
            f.solve(&mut w);
            w.iter_mut().zip(&outer).for_each(|(x, &o)| if !o { *x = 0.0 });
            let s = dot(&w, &w).sqrt();
            f.solve(&mut w);
            w.iter_mut().zip(&inner).for_each(|(x, &i)| if !i { *x = 0.0 });
            let done = (s - sigma).abs() <= 1e-10 * s;
            sigma = s;
            v = w;
            if done {
                break;
            }
        }
        sigma
    });
    let pts: Vec<(f64, f64)> =
        k_list.iter().zip(&norms).filter(|(_, n)| **n > 0.0).map(|(k, n)| (*k as f64, n.ln())).collect();
    let (c, s) = if pts.len() >= 2 {
        let (c, s, _) = fit_line(&pts.iter().map(|p| p.0).collect::<Vec<_>>(), &pts.iter().map(|p| p.1).collect::<Vec<_>>());
        (c, s)
    } else {
        (f64::NAN, f64::NAN)
    };
    let eps0 = -s;
    let monotone = norms.windows(2).all(|w| w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0));
    let probes = k_list
        .iter()
        .zip(&norms)
        .map(|(&k, &measured_norm)| CombesThomasProbe { eps0, lambda, k, measured_norm })
        .collect();
    Ok(CombesThomasReport { probes, eps0, c1: c.exp(), monotone })
}
