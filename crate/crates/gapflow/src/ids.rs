//! Eigenvalue counting on periodic squares.
//!
//! The tube potential is extended 1-periodically in `y` to the square
//! `Q_n = (−n, n)²` with periodic boundary conditions in both directions,
//! and the number of eigenvalues in a gap window is followed as `n` grows.
//! For separable potentials `V(x, y) = X(x) + Y(y)` the torus operator is a
//! Kronecker sum of two rings and the count is assembled from their spectra;
//! otherwise the full torus operator is counted by inertia at both ends.

use faer::Mat;
use serde::Serialize;

use crate::eigensolve::{dense_eigenvalues, inertia_count_perturbed};
use crate::error::{Error, Result};
use crate::floquet::{merge, FloquetChain};
use crate::grid::Resolution;
use crate::operator::{periodic_layout, DiscreteOperator};
use crate::par;
use crate::potential::{DislocationFamily, Sampler, XPart, YPart};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TorusMethod {
    /// Kronecker route when the family is separable, direct otherwise.
    Auto,
    Direct,
    Kronecker,
}

fn lines_for(n: f64, res: Resolution) -> Result<usize> {
    if !(n > 0.0) {
        return Err(Error::Config(format!("square half-size must be positive, got {n}")));
    }
    let cells = 2.0 * n / res.hx;
    if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
        return Err(Error::Config(format!("2n = {} is not a multiple of hx = {}", 2.0 * n, res.hx)));
    }
    let rings = 2.0 * n;
    if (rings - rings.round()).abs() > 1e-9 {
        return Err(Error::Config(format!("2n = {rings} must be a whole number of unit y-periods")));
    }
    Ok(cells.round() as usize)
}

fn check_resolution(res: Resolution) -> Result<()> {
    if res.ny < 4 {
        return Err(Error::Config(format!("ny = {} points per unit y cannot resolve the unit period", res.ny)));
    }
    Ok(())
}

fn check_snapped(t: f64, res: Resolution) -> Result<f64> {
    let s = res.snap(t);
    if (s - t).abs() > 1e-9 * res.hx {
        return Err(Error::Precondition(format!("t = {t} is not a multiple of hx = {}", res.hx)));
    }
    Ok(s)
}

/// `−Δ + V_t` on the torus `Q_n` with `2n/hx` lines in x and `2n·ny` nodes
/// around each ring; node `j` of a ring samples `V` at `(j mod ny)·hy`.
pub fn assemble_torus_hamiltonian(
    n: f64,
    t: f64,
    family: &DislocationFamily,
    res: Resolution,
) -> Result<DiscreteOperator> {
    check_resolution(res)?;
    let t = check_snapped(t, res)?;
    let nxl = lines_for(n, res)?;
    let ring = (2.0 * n).round() as usize * res.ny;
    let hy = res.hy();
    let rows: Vec<Result<Vec<f64>>> = par::map_range(nxl, |i| {
        let x = snap_zero(-n + i as f64 * res.hx, res.hx);
        (0..ring).map(|j| family.value(x, (j % res.ny) as f64 * hy, t)).collect()
    });
    let mut pot = Vec::with_capacity(nxl * ring);
    for r in rows {
        pot.extend(r?);
    }
    periodic_layout(-n, res.hx, nxl, ring, hy, &pot)
}

fn snap_zero(x: f64, h: f64) -> f64 {
    if x.abs() < 1e-9 * h {
        0.0
    } else {
        x
    }
}

/// Eigenvalues of a periodic chain `(2u_i − u_{i−1} − u_{i+1})/h² + v_i u_i`.
pub fn ring_eigenvalues(h: f64, v: &[f64]) -> Result<Vec<f64>> {
    let m = v.len();
    if m < 3 {
        return Err(Error::Domain(format!("a ring needs at least 3 nodes, got {m}")));
    }
    let w = 1.0 / (h * h);
    let mut a = Mat::<f64>::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = 2.0 * w + v[i];
        let j = (i + 1) % m;
        a[(i, j)] -= w;
        a[(j, i)] -= w;
    }
    let mut e = dense_eigenvalues(&a)?;
    e.sort_by(f64::total_cmp);
    Ok(e)
}

/// The separable parts of a family: x-parts of both sides and the shared
/// y-part, or `None` when the sides are not separable or their y-parts
/// differ on the nodes of `res`.
fn separable_parts(family: &DislocationFamily, res: Resolution) -> Option<(XPart, XPart, YPart)> {
    let (x1, y1) = family.v1.separable()?;
    let (x2, y2) = family.v2.separable()?;
    let hy = res.hy();
    let same = (0..res.ny).all(|j| {
        let y = j as f64 * hy;
        (y1(y) - y2(y)).abs() <= 1e-14 * (1.0 + y1(y).abs())
    });
    same.then_some((x1, x2, y1))
}

/// Spectra of the two rings whose Kronecker sum is the torus operator.
struct Kronecker {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Kronecker {
    fn new(n: f64, t: f64, parts: &(XPart, XPart, YPart), res: Resolution) -> Result<Self> {
        let nxl = lines_for(n, res)?;
        let (x1, x2, y) = parts;
        let vx: Vec<f64> = (0..nxl)
            .map(|i| {
                let x = snap_zero(-n + i as f64 * res.hx, res.hx);
                if x >= 0.0 {
                    x1(x)
                } else {
                    x2(x + t)
                }
            })
            .collect();
        let ring = (2.0 * n).round() as usize * res.ny;
        let hy = res.hy();
        let vy: Vec<f64> = (0..ring).map(|j| y((j % res.ny) as f64 * hy)).collect();
        Ok(Self { x: ring_eigenvalues(res.hx, &vx)?, y: ring_eigenvalues(hy, &vy)? })
    }

    /// `#{(i, k) : λ_i + μ_k < e}`
    fn count_below(&self, e: f64) -> usize {
        self.y.iter().map(|&mu| self.x.partition_point(|&l| l + mu < e)).sum()
    }

    /// `#{(i, k) : λ_i + μ_k ∈ [lo, hi]}`
    fn count_window(&self, lo: f64, hi: f64) -> usize {
        self.y
            .iter()
            .map(|&mu| self.x.partition_point(|&l| l + mu <= hi) - self.x.partition_point(|&l| l + mu < lo))
            .sum()
    }
}

/// Number of torus eigenvalues in `[lo, hi]`.
pub fn torus_window_count(
    n: f64,
    t: f64,
    family: &DislocationFamily,
    window: (f64, f64),
    res: Resolution,
    method: TorusMethod,
) -> Result<usize> {
    check_resolution(res)?;
    let t = check_snapped(t, res)?;
    let parts = separable_parts(family, res);
    let use_kron = match method {
        TorusMethod::Direct => false,
        TorusMethod::Kronecker => {
            if parts.is_none() {
                return Err(Error::Config("the Kronecker route needs a separable family with a shared y-part".into()));
            }
            true
        }
        TorusMethod::Auto => parts.is_some(),
    };
    if use_kron {
        let k = Kronecker::new(n, t, parts.as_ref().unwrap(), res)?;
        return Ok(k.count_window(window.0, window.1));
    }
    let op = assemble_torus_hamiltonian(n, t, family, res)?;
    let norm = op.norm_bound().max(1.0);
    let hi = inertia_count_perturbed(&op, window.1)?.0;
    let lo = inertia_count_perturbed(&op, window.0 - 10.0 * f64::EPSILON * norm)?.0;
    Ok(hi - lo)
}

/// Number of torus eigenvalues strictly below `e`.
pub fn torus_count_below(
    n: f64,
    t: f64,
    family: &DislocationFamily,
    e: f64,
    res: Resolution,
    method: TorusMethod,
) -> Result<usize> {
    check_resolution(res)?;
    let t = check_snapped(t, res)?;
    match (method, separable_parts(family, res)) {
        (TorusMethod::Auto | TorusMethod::Kronecker, Some(p)) => Ok(Kronecker::new(n, t, &p, res)?.count_below(e)),
        (TorusMethod::Kronecker, None) => {
            Err(Error::Config("the Kronecker route needs a separable family with a shared y-part".into()))
        }
        _ => Ok(inertia_count_perturbed(&assemble_torus_hamiltonian(n, t, family, res)?, e)?.0),
    }
}

/// Gaps of the plane operator `−Δ + V` (V 1-periodic in y, periodic in x)
/// inside `[lo, hi]`, for separable `V`, as the complement of the sum of
/// the two chains' band sets. `None` when `V` is not separable.
pub fn plane_gaps(v: &dyn Sampler, res: Resolution, lo: f64, hi: f64) -> Result<Option<Vec<(f64, f64)>>> {
    let (Some((vx, vy)), Some(p)) = (v.separable(), v.x_period()) else { return Ok(None) };
    let steps = (p / res.hx).round() as usize;
    if ((steps as f64) * res.hx - p).abs() > 1e-9 {
        return Ok(None);
    }
    let bx = FloquetChain::new(|x| vx(x), res.hx, steps, 0.0)?.bands();
    let by = FloquetChain::new(|y| vy(y), res.hy(), res.ny, 0.0)?.bands();
    let mut all = Vec::with_capacity(bx.len() * by.len());
    for &(a, b) in &bx {
        for &(c, d) in &by {
            all.push((a + c, b + d));
        }
    }
    let spec = merge(all, 0.0);
    Ok(Some(
        spec.windows(2)
            .map(|w| (w[0].1, w[1].0))
            .filter(|&(a, b)| b > a && b >= lo && a <= hi)
            .collect(),
    ))
}

/// Checks `window` against the plane gaps of both sides of the family.
/// Non-separable sides need `verified_gap`.
pub fn check_window(
    family: &DislocationFamily,
    window: (f64, f64),
    res: Resolution,
    verified_gap: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    let inside = |g: (f64, f64)| window.0 > g.0 && window.1 < g.1;
    if let Some(g) = verified_gap {
        if !inside(g) {
            return Err(Error::Config(format!("window {window:?} is not inside the verified gap {g:?}")));
        }
    }
    let mut found = verified_gap;
    for side in [&family.v1, &family.v2] {
        match plane_gaps(side.as_ref(), res, window.0 - 1.0, window.1 + 1.0)? {
            Some(gs) => match gs.into_iter().find(|&g| inside(g)) {
                Some(g) => found = Some(found.map_or(g, |f| (f.0.max(g.0), f.1.min(g.1)))),
                None => {
                    return Err(Error::Config(format!(
                        "window {window:?} is not inside a gap of the plane operator for {}",
                        side.label()
                    )))
                }
            },
            None if verified_gap.is_some() => {}
            None => {
                return Err(Error::Config(format!(
                    "window containment cannot be verified for {}; supply a verified gap",
                    side.label()
                )))
            }
        }
    }
    Ok(found.expect("at least one route verified the window"))
}

#[derive(Clone, Debug, Serialize)]
pub struct TorusRun {
    pub n_list: Vec<f64>,
    pub t: f64,
    pub window: (f64, f64),
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdsFit {
    pub slope: f64,
    pub intercept: f64,
    /// slope over the three largest `n`
    pub slope_top: f64,
    pub count_per_n: Vec<f64>,
    pub count_per_nlogn: Vec<f64>,
    pub nondecreasing: bool,
    /// `count/(n log n)` over the last three entries never increases
    pub tail_nonincreasing: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdsRun {
    pub run: TorusRun,
    pub fit: IdsFit,
    pub gap: (f64, f64),
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let s = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (s, my - s * mx)
}

pub fn fit_counts(n_list: &[f64], counts: &[usize]) -> IdsFit {
    let y: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (slope, intercept) = least_squares(n_list, &y);
    let k = n_list.len().saturating_sub(3);
    let (slope_top, _) = least_squares(&n_list[k..], &y[k..]);
    let count_per_n: Vec<f64> = n_list.iter().zip(&y).map(|(n, c)| c / n).collect();
    let count_per_nlogn: Vec<f64> = n_list.iter().zip(&y).map(|(n, c)| c / (n * n.ln())).collect();
    IdsFit {
        slope,
        intercept,
        slope_top,
        nondecreasing: counts.windows(2).all(|w| w[1] >= w[0]),
        tail_nonincreasing: count_per_nlogn[k..].windows(2).all(|w| w[1] <= w[0]),
        count_per_n,
        count_per_nlogn,
    }
}

/// Window counts on `Q_n` for every `n` in `n_list`, with linear and
/// `n log n` trend fits.
pub fn ids_scaling_run(
    family: &DislocationFamily,
    t: f64,
    window: (f64, f64),
    n_list: &[f64],
    res: Resolution,
    method: TorusMethod,
    verified_gap: Option<(f64, f64)>,
) -> Result<IdsRun> {
    if n_list.len() < 2 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("n_list needs at least two increasing entries".into()));
    }
    if n_list.iter().any(|&n| n <= 1.0) {
        return Err(Error::Config("every n in n_list must exceed 1".into()));
    }
    let gap = check_window(family, window, res, verified_gap)?;
    let counts: Vec<Result<usize>> =
        par::map(n_list, |&n| torus_window_count(n, t, family, window, res, method));
    let counts: Vec<usize> = counts.into_iter().collect::<Result<_>>()?;
    let fit = fit_counts(n_list, &counts);
    Ok(IdsRun { run: TorusRun { n_list: n_list.to_vec(), t, window, counts }, fit, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Preset;

    #[test]
    fn free_torus_is_separable_sum() {
        let res = Resolution::new(0.25, 4).unwrap();
        let fam = DislocationFamily::preset(Preset::Free);
        let op = assemble_torus_hamiltonian(1.0, 0.0, &fam, res).unwrap();
        let mut dense = dense_eigenvalues(&op.to_dense()).unwrap();
        dense.sort_by(f64::total_cmp);
        let ring = |m: usize, h: f64| -> Vec<f64> {
            (0..m).map(|k| 4.0 / (h * h) * (std::f64::consts::PI * k as f64 / m as f64).sin().powi(2)).collect()
        };
        let mut sums: Vec<f64> = ring(8, 0.25)
            .iter()
            .flat_map(|a| ring(8, 0.25).into_iter().map(move |b| a + b))
            .collect();
        sums.sort_by(f64::total_cmp);
        for (a, b) in dense.iter().zip(&sums) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn kronecker_matches_direct() {
        let res = Resolution::new(0.125, 4).unwrap();
        let fam = DislocationFamily::preset(Preset::Product { q1: 3.0, q2: 2.0 });
        for t in [0.0, 0.25, 0.5] {
            for e in [-3.0, 5.0, 20.0] {
                let a = torus_count_below(1.5, t, &fam, e, res, TorusMethod::Kronecker).unwrap();
                let b = torus_count_below(1.5, t, &fam, e, res, TorusMethod::Direct).unwrap();
                assert_eq!(a, b, "t = {t}, e = {e}");
            }
        }
    }

    #[test]
    fn unsnapped_t_rejected() {
        let res = Resolution::new(0.125, 4).unwrap();
        let fam = DislocationFamily::preset(Preset::Free);
        assert!(matches!(assemble_torus_hamiltonian(1.0, 0.1, &fam, res), Err(Error::Precondition(_))));
    }
}
