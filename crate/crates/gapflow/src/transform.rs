//! Coordinate transformation of the dislocation problem.
//!
//! A mollified stretch map `φ_t` (identity on the left, translation by `t`
//! on the right) turns `H_t` into an operator `C_t` whose coefficients differ
//! from the free ones only on a bounded band. Here `φ_t` is tabulated, `C_t`
//! is assembled as a symmetric finite-difference operator, and the two sides
//! are compared spectrally. The module also hosts the BV translation
//! estimates and the eigenvalue-branch Lipschitz fits.
//!
//! Orientation. The dislocation family keeps `V1` fixed on `x ≥ 0` and moves
//! `V2(x + t)` on `x < 0`, while `φ_t` fixes the left and moves the right.
//! The two are related by the reflection `x ↦ −x`: the operator is assembled
//! with the mirrored map `ψ_t(x) = −φ_t(−x)`, which is the identity for
//! `x ≥ width` and `x − t` for `x ≤ −1 − width`. Under `ψ_t` the section
//! `(−L, L)` is the image of `(−L − t, L)`, the section on which `H_t` is
//! compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::eigensolve::{inertia_count_perturbed, window_spectrum};
use crate::error::{Error, Result, ResultExt};
use crate::gap::EigBranch;
use crate::grid::{Resolution, TubeGrid};
use crate::operator::DiscreteOperator;
use crate::par;
use crate::potential::{cell_mean, sample_dislocation, DislocationFamily};
use crate::quad::{adaptive, gauss_legendre};

const AUX_PANELS: usize = 4096;

/// Smooth bump `j_w(x) ∝ exp(−1/(1 − (x/w)²))` on `(−w, w)`, with its
/// distribution function and the running integral of that, tabulated on a
/// fine auxiliary grid.
#[derive(Clone, Debug)]
struct Mollifier {
    width: f64,
    norm: f64,
    h: f64,
    /// `J(s_k) = ∫_{−w}^{s_k} j`
    cdf: Vec<f64>,
    /// `G(s_k) = ∫_{−w}^{s_k} J`
    cdf_int: Vec<f64>,
}

impl Mollifier {
    fn new(width: f64) -> Self {
        let rule = gauss_legendre(10);
        let raw = |u: f64| if u.abs() < 1.0 { (-1.0 / (1.0 - u * u)).exp() } else { 0.0 };
        let h = 2.0 * width / AUX_PANELS as f64;
        let s = |k: usize| -width + k as f64 * h;

        let mut partial = Vec::with_capacity(AUX_PANELS);
        for k in 0..AUX_PANELS {
            partial.push(crate::quad::gauss(|x| raw(x / width), s(k), s(k + 1), &rule));
        }
        let total: f64 = partial.iter().sum();
        let norm = total;
        let mut cdf = vec![0.0; AUX_PANELS + 1];
        for k in 0..AUX_PANELS {
            cdf[k + 1] = cdf[k] + partial[k] / norm;
        }
        cdf[AUX_PANELS] = 1.0;

        let mut m = Self { width, norm, h, cdf, cdf_int: vec![0.0; AUX_PANELS + 1] };
        let mut acc = 0.0;
        for k in 0..AUX_PANELS {
            acc += crate::quad::gauss(|x| m.big_j(x), s(k), s(k + 1), &rule);
            m.cdf_int[k + 1] = acc;
        }
        m
    }

    fn j(&self, x: f64) -> f64 {
        let u = x / self.width;
        if u.abs() < 1.0 {
            (-1.0 / (1.0 - u * u)).exp() / self.norm
        } else {
            0.0
        }
    }

    fn panel(&self, x: f64) -> (usize, f64) {
        let p = (x + self.width) / self.h;
        let k = (p.floor() as usize).min(AUX_PANELS - 1);
        (k, p - k as f64)
    }

    fn big_j(&self, x: f64) -> f64 {
        if x <= -self.width {
            return 0.0;
        }
        if x >= self.width {
            return 1.0;
        }
        let (k, s) = self.panel(x);
        let x0 = -self.width + k as f64 * self.h;
        hermite(self.cdf[k], self.cdf[k + 1], self.j(x0), self.j(x0 + self.h), self.h, s)
    }

    fn big_g(&self, x: f64) -> f64 {
        if x <= -self.width {
            return 0.0;
        }
        if x >= self.width {
            return self.cdf_int[AUX_PANELS] + (x - self.width);
        }
        let (k, s) = self.panel(x);
        let x0 = -self.width + k as f64 * self.h;
        hermite(self.cdf_int[k], self.cdf_int[k + 1], self.big_j(x0), self.big_j(x0 + self.h), self.h, s)
    }
}

fn hermite(f0: f64, f1: f64, d0: f64, d1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    f0 * (2.0 * s3 - 3.0 * s2 + 1.0) + d0 * h * (s3 - 2.0 * s2 + s) + f1 * (3.0 * s2 - 2.0 * s3) + d1 * h * (s3 - s2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Orientation {
    /// `φ_t`: identity left of the band, `x + t` right of it.
    Forward,
    /// `ψ_t(x) = −φ_t(−x)`: `x − t` left of the band, identity right of it.
    Mirrored,
}

/// The stretch map `φ_t = j_w * φ̃_t`, with `φ̃_t` equal to `x` on `x ≤ 0`,
/// `(1 + t)x` on `[0, 1]` and `x + t` on `x ≥ 1`.
#[derive(Clone, Debug)]
pub struct Diffeomorphism {
    pub t: f64,
    pub width: f64,
    pub orientation: Orientation,
    /// Left edge of the band outside of which the map is a translation.
    pub flat_left: f64,
    pub flat_right: f64,
    moll: Mollifier,
}

/// Builds `φ_t` for `|t| ≤ 1/2` and a mollifier radius in `(0, 1]`.
pub fn build_phi(t: f64, mollifier_width: f64) -> Result<Diffeomorphism> {
    if !(t.abs() <= 0.5) {
        return Err(Error::Domain(format!("the stretch map needs |t| <= 1/2, got {t}")));
    }
    if !(mollifier_width > 0.0 && mollifier_width <= 1.0) {
        return Err(Error::Domain(format!("mollifier width must lie in (0, 1], got {mollifier_width}")));
    }
    Ok(Diffeomorphism {
        t,
        width: mollifier_width,
        orientation: Orientation::Forward,
        flat_left: -mollifier_width,
        flat_right: 1.0 + mollifier_width,
        moll: Mollifier::new(mollifier_width),
    })
}

impl Diffeomorphism {
    /// The reflected map used for the dislocation family's orientation.
    pub fn mirrored(&self) -> Self {
        let orientation = match self.orientation {
            Orientation::Forward => Orientation::Mirrored,
            Orientation::Mirrored => Orientation::Forward,
        };
        Self { orientation, flat_left: -self.flat_right, flat_right: -self.flat_left, ..self.clone() }
    }

    fn fwd(&self, x: f64) -> f64 {
        x + self.t * (self.moll.big_g(x) - self.moll.big_g(x - 1.0))
    }

    fn fwd_d(&self, x: f64) -> f64 {
        1.0 + self.t * (self.moll.big_j(x) - self.moll.big_j(x - 1.0))
    }

    fn fwd_dd(&self, x: f64) -> f64 {
        self.t * (self.moll.j(x) - self.moll.j(x - 1.0))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.orientation {
            Orientation::Forward => self.fwd(x),
            Orientation::Mirrored => -self.fwd(-x),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self.orientation {
            Orientation::Forward => self.fwd_d(x),
            Orientation::Mirrored => self.fwd_d(-x),
        }
    }

    pub fn second(&self, x: f64) -> f64 {
        match self.orientation {
            Orientation::Forward => self.fwd_dd(x),
            Orientation::Mirrored => -self.fwd_dd(-x),
        }
    }

    /// `α = map − id` far to the right (forward) or left (mirrored).
    pub fn far_shift(&self) -> f64 {
        match self.orientation {
            Orientation::Forward => self.t,
            Orientation::Mirrored => -self.t,
        }
    }

    /// Solves `map(x) = y` by safeguarded Newton; the derivative stays in
    /// `[1/2, 3/2]`, so the bracket `y ± |t|` always holds the root.
    pub fn inverse(&self, y: f64) -> f64 {
        let mut lo = y - self.t.abs() - 1e-12;
        let mut hi = y + self.t.abs() + 1e-12;
        let mut x = y - self.far_shift() * 0.5;
        for _ in 0..100 {
            let f = self.eval(x) - y;
            if f.abs() <= 1e-15 * (1.0 + y.abs()) {
                return x;
            }
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let mut nx = x - f / self.deriv(x);
            if !(nx > lo && nx < hi) {
                nx = 0.5 * (lo + hi);
            }
            if (nx - x).abs() <= 1e-16 * (1.0 + x.abs()) {
                return nx;
            }
            x = nx;
        }
        x
    }

    /// Band outside of which `map' ≡ 1`.
    pub fn band(&self) -> (f64, f64) {
        (self.flat_left, self.flat_right)
    }
}

/// Worst-case deviations of the map over a sample.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PhiBounds {
    pub t: f64,
    pub max_displacement: f64,
    pub max_deriv_deviation: f64,
    pub max_second: f64,
    pub min_deriv: f64,
}

impl PhiBounds {
    /// `|φ − x| ≤ c|t|`, `|φ' − 1| ≤ |t|`, `|φ''| ≤ c|t|`, `φ' ≥ 1/2`.
    pub fn holds(&self, c: f64) -> bool {
        let at = self.t.abs();
        let tol = 1e-12;
        self.max_displacement <= c * at + tol
            && self.max_deriv_deviation <= at + tol
            && self.max_second <= c * at + tol
            && self.min_deriv >= 0.5 - tol
    }
}

pub fn phi_bounds(phi: &Diffeomorphism, lo: f64, hi: f64, samples: usize) -> PhiBounds {
    let mut b = PhiBounds {
        t: phi.t,
        max_displacement: 0.0,
        max_deriv_deviation: 0.0,
        max_second: 0.0,
        min_deriv: f64::INFINITY,
    };
    for k in 0..samples {
        let x = lo + (hi - lo) * k as f64 / (samples.max(2) - 1) as f64;
        let d = phi.deriv(x);
        b.max_displacement = b.max_displacement.max((phi.eval(x) - x).abs());
        b.max_deriv_deviation = b.max_deriv_deviation.max((d - 1.0).abs());
        b.max_second = b.max_second.max(phi.second(x).abs());
        b.min_deriv = b.min_deriv.min(d);
    }
    b
}

/// How node potentials are taken from a possibly discontinuous profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialRule {
    /// Point value at the node.
    Sample,
    /// Mean over the node's cell `[x − hx/2, x + hx/2]`, exact across jumps.
    CellAverage,
}

/// Jump locations of `V_t(·, y)` inside `[lo, hi]`.
pub fn dislocation_breaks(family: &DislocationFamily, t: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if lo < 0.0 && hi > 0.0 {
        out.push(0.0);
    }
    if hi > 0.0 {
        out.extend(family.v1.x_breaks(lo.max(0.0), hi));
    }
    if lo < 0.0 {
        out.extend(family.v2.x_breaks(lo + t, hi.min(0.0) + t).into_iter().map(|b| b - t));
    }
    out.retain(|&b| b > lo && b < hi);
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn node_potential(
    family: &DislocationFamily,
    t: f64,
    grid: &TubeGrid,
    rule: PotentialRule,
    map: Option<&Diffeomorphism>,
) -> Result<Vec<f64>> {
    let lines = grid.lines();
    let ny = grid.ny;
    let rows: Vec<Result<Vec<f64>>> = par::map_range(lines, |i| {
        let x = grid.line_x(i);
        let x = if x.abs() < 1e-9 * grid.hx { 0.0 } else { x };
        let mut row = Vec::with_capacity(ny);
        match rule {
            PotentialRule::Sample => {
                let xi = map.map_or(x, |m| m.eval(x));
                for j in 0..ny {
                    row.push(family.value(xi, grid.y(j), t)?);
                }
            }
            PotentialRule::CellAverage => {
                let (a, b) = (x - 0.5 * grid.hx, x + 0.5 * grid.hx);
                let breaks: Vec<f64> = match map {
                    None => dislocation_breaks(family, t, a, b),
                    Some(m) => dislocation_breaks(family, t, m.eval(a), m.eval(b))
                        .into_iter()
                        .map(|p| m.inverse(p))
                        .collect(),
                };
                for j in 0..ny {
                    let y = grid.y(j);
                    let v = match map {
                        None => cell_mean(|s| family.value(s, y, t), a, b, &breaks)?,
                        Some(m) => cell_mean(|s| family.value(m.eval(s), y, t), a, b, &breaks)?,
                    };
                    row.push(v);
                }
            }
        }
        Ok(row)
    });
    let mut out = Vec::with_capacity(lines * ny);
    for r in rows {
        out.extend(r?);
    }
    Ok(out)
}

/// `H_t` on `grid` with the chosen potential rule. With
/// [`PotentialRule::Sample`] this is exactly the assembled Hamiltonian of
/// the sampled dislocation potential.
pub fn dislocated_operator(
    family: &DislocationFamily,
    t: f64,
    grid: &TubeGrid,
    rule: PotentialRule,
) -> Result<DiscreteOperator> {
    let pot = match rule {
        PotentialRule::Sample => sample_dislocation(family, t, grid)?.values,
        PotentialRule::CellAverage => node_potential(family, t, grid, rule, None)?,
    };
    let lines = grid.lines();
    let h2 = 1.0 / (grid.hx * grid.hx);
    DiscreteOperator::from_lines(
        grid.xs(),
        grid.ny,
        grid.hy,
        &vec![2.0 * h2; lines],
        vec![h2; lines - 1],
        None,
        &pot,
        (grid.x_min, grid.x_max),
    )
}

/// Coefficient fields of the transformed form on a line grid.
#[derive(Clone, Debug, Serialize)]
pub struct TransformedCoefficients {
    /// line positions
    pub xs: Vec<f64>,
    /// `1/ψ'²` at the cell faces `x_i ± hx/2`, one more entry than `xs`
    pub a_faces: Vec<f64>,
    /// `ψ''/ψ'³` at the nodes
    pub b: Vec<f64>,
    /// `ψ''²/(4ψ'⁴)` at the nodes
    pub q: Vec<f64>,
}

pub fn transformed_coefficients(map: &Diffeomorphism, grid: &TubeGrid) -> TransformedCoefficients {
    let xs = grid.xs();
    let h = grid.hx;
    let mut a_faces = Vec::with_capacity(xs.len() + 1);
    a_faces.push(map.deriv(xs[0] - 0.5 * h).powi(-2));
    for &x in &xs {
        a_faces.push(map.deriv(x + 0.5 * h).powi(-2));
    }
    let b = xs.iter().map(|&x| map.second(x) / map.deriv(x).powi(3)).collect();
    let q = xs.iter().map(|&x| map.second(x).powi(2) / (4.0 * map.deriv(x).powi(4))).collect();
    TransformedCoefficients { xs, a_faces, b, q }
}

/// The operator `C_t` of the form
/// `∫ |∂₁w|²/ψ'² + |∂₂w|² − (ψ''/ψ'³) Re(w̄ ∂₁w) + ψ''²/(4ψ'⁴)|w|² + V_t∘Ψ |w|²`
/// on `grid`, with `ψ_t` the mirrored stretch map of radius `width`.
///
/// The x-part is in divergence form with face coefficients; the first-order
/// term is the average of the forward and backward weighted differences,
/// whose symmetric part couples neighbours by `(b_{i+1} − b_i)/(4hx)`.
pub fn assemble_transformed_operator(
    t: f64,
    family: &DislocationFamily,
    grid: &TubeGrid,
    width: f64,
    rule: PotentialRule,
) -> Result<DiscreteOperator> {
    let map = build_phi(t, width)?.mirrored();
    assemble_with_map(&map, family, grid, rule)
}

pub fn assemble_with_map(
    map: &Diffeomorphism,
    family: &DislocationFamily,
    grid: &TubeGrid,
    rule: PotentialRule,
) -> Result<DiscreteOperator> {
    let c = transformed_coefficients(map, grid);
    let h = grid.hx;
    let h2 = 1.0 / (h * h);
    let n = c.xs.len();
    let x_diag: Vec<f64> = (0..n).map(|i| (c.a_faces[i] + c.a_faces[i + 1]) * h2 + c.q[i]).collect();
    let tx: Vec<f64> = (0..n.saturating_sub(1))
        .map(|i| c.a_faces[i + 1] * h2 - (c.b[i + 1] - c.b[i]) / (4.0 * h))
        .collect();
    let pot = node_potential(family, map.t, grid, rule, Some(map))?;
    DiscreteOperator::from_lines(c.xs, grid.ny, grid.hy, &x_diag, tx, None, &pot, (grid.x_min, grid.x_max))
}

/// Geometry shared by both sides of an equivalence check.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EquivalenceSetup {
    /// The transformed side lives on `(−L, L)`, the direct side on `(−L − t, L)`.
    pub half_length: f64,
    pub width: f64,
    pub rule: PotentialRule,
    pub max_pairs: usize,
}

impl Default for EquivalenceSetup {
    fn default() -> Self {
        Self { half_length: 6.0, width: 1.0, rule: PotentialRule::CellAverage, max_pairs: 64 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub t: f64,
    pub window: (f64, f64),
    pub direct: Vec<f64>,
    pub transformed: Vec<f64>,
    /// `(λ(H_t), λ(C_t), |difference|)`, matched in order
    pub pairs: Vec<(f64, f64, f64)>,
    pub max_discrepancy: f64,
    /// window populations by inertia at both ends
    pub count_direct: usize,
    pub count_transformed: usize,
    pub counts_match: bool,
}

/// Compares the window spectra of `H_t` and `C_t` on matched sections.
pub fn equivalence_check(
    t: f64,
    family: &DislocationFamily,
    window: (f64, f64),
    res: Resolution,
    setup: &EquivalenceSetup,
) -> Result<EquivalenceReport> {
    if !(t.abs() <= 0.5) {
        return Err(Error::Domain(format!("equivalence check needs |t| <= 1/2, got {t}")));
    }
    if (res.snap(t) - t).abs() > 1e-9 * res.hx.max(1.0) {
        return Err(Error::Precondition(format!("t = {t} is not a multiple of hx = {}", res.hx)));
    }
    let l = res.snap(setup.half_length);
    let t = res.snap(t);
    let direct_grid = res.grid(-l - t, l)?;
    let trans_grid = res.grid(-l, l)?;
    let h = dislocated_operator(family, t, &direct_grid, setup.rule).context("direct side")?;
    let c = assemble_transformed_operator(t, family, &trans_grid, setup.width, setup.rule).context("transformed side")?;

    let count = |op: &DiscreteOperator| -> Result<usize> {
        Ok(inertia_count_perturbed(op, window.1)?.0 - inertia_count_perturbed(op, window.0)?.0)
    };
    let count_direct = count(&h)?;
    let count_transformed = count(&c)?;
    let spec = |op: &DiscreteOperator| -> Result<Vec<f64>> {
        Ok(window_spectrum(op, window, setup.max_pairs)?.eigenvalues)
    };
    let direct = spec(&h)?;
    let transformed = spec(&c)?;
    let pairs: Vec<(f64, f64, f64)> =
        direct.iter().zip(&transformed).map(|(&a, &b)| (a, b, (a - b).abs())).collect();
    let max_discrepancy = if direct.len() == transformed.len() {
        pairs.iter().map(|p| p.2).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(EquivalenceReport {
        t,
        window,
        direct,
        transformed,
        pairs,
        max_discrepancy,
        count_direct,
        count_transformed,
        counts_match: count_direct == count_transformed,
    })
}

/// Eigenvalue traces in `window` over `ts`, one branch per global index
/// (the `k`-th eigenvalue of the operator overall). A branch holds only the
/// samples at which its eigenvalue lies in the window.
pub fn window_branches<F>(window: (f64, f64), ts: &[f64], max_pairs: usize, build: F) -> Result<Vec<EigBranch>>
where
    F: Fn(f64) -> Result<DiscreteOperator> + Sync + Send,
{
    let per_t: Vec<Result<(usize, Vec<f64>)>> = par::map(ts, |&t| {
        let op = build(t)?;
        let below = inertia_count_perturbed(&op, window.0)?.0;
        let eig = window_spectrum(&op, window, max_pairs)?.eigenvalues;
        Ok((below, eig))
    });
    let mut by_index: std::collections::BTreeMap<usize, Vec<(f64, f64, usize)>> = Default::default();
    for (r, &t) in per_t.into_iter().zip(ts) {
        let (below, eig) = r.with_context(|| format!("branch sample at t = {t}"))?;
        for (k, &l) in eig.iter().enumerate() {
            let mult = eig.iter().filter(|&&m| (m - l).abs() <= 1e-8 * (1.0 + l.abs())).count();
            by_index.entry(below + k).or_default().push((t, l, mult));
        }
    }
    Ok(by_index.into_values().map(|samples| EigBranch { samples, crossing_params: Vec::new() }).collect())
}

trait WithContext<T> {
    fn with_context(self, f: impl FnOnce() -> String) -> Result<T>;
}

impl<T> WithContext<T> for Result<T> {
    fn with_context(self, f: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.context(f()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchFit {
    pub branch: EigBranch,
    /// largest difference quotient over the contiguous in-window segments
    pub lipschitz_constant: f64,
    /// largest difference quotient over all successive sample pairs
    pub max_difference_quotient: f64,
    /// largest `|Δλ|` between successive in-window samples
    pub max_jump: f64,
    /// `(t_mid, quotient)` for each successive in-window pair
    pub quotients: Vec<(f64, f64)>,
    pub spacing: f64,
}

/// Difference quotients of a branch. Pairs separated by more than 1.5 times
/// the smallest spacing straddle an excursion out of the window and do not
/// count towards the constant.
pub fn branch_lipschitz_fit(branch: &EigBranch) -> Result<BranchFit> {
    let s = &branch.samples;
    if s.len() < 4 {
        return Err(Error::Domain(format!("a branch fit needs at least 4 samples, got {}", s.len())));
    }
    if s.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Domain("branch samples must have strictly increasing t".into()));
    }
    let spacing = s.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min);
    let mut fit = BranchFit {
        branch: branch.clone(),
        lipschitz_constant: 0.0,
        max_difference_quotient: 0.0,
        max_jump: 0.0,
        quotients: Vec::new(),
        spacing,
    };
    for w in s.windows(2) {
        let dt = w[1].0 - w[0].0;
        let dl = (w[1].1 - w[0].1).abs();
        let qt = dl / dt;
        fit.max_difference_quotient = fit.max_difference_quotient.max(qt);
        if dt <= 1.5 * spacing {
            fit.lipschitz_constant = fit.lipschitz_constant.max(qt);
            fit.max_jump = fit.max_jump.max(dl);
            fit.quotients.push((0.5 * (w[0].0 + w[1].0), qt));
        }
    }
    Ok(fit)
}

/// One level of a spacing scan.
#[derive(Clone, Debug, Serialize)]
pub struct LipschitzLevel {
    pub dt: f64,
    pub branches: usize,
    /// largest constant over branches with at least 4 samples
    pub constant: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzScan {
    pub levels: Vec<LipschitzLevel>,
    /// largest `|c_{k+1}/c_k − 1|` between successive levels
    pub max_relative_change: f64,
}

/// Branch constants of `H_t` on a fixed section over `[t0, t1]` with
/// spacing `dt0 / 2^k`, `k = 0..=halvings`.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_scan(
    family: &DislocationFamily,
    window: (f64, f64),
    res: Resolution,
    half_length: f64,
    t_range: (f64, f64),
    dt0: f64,
    halvings: usize,
    rule: PotentialRule,
) -> Result<LipschitzScan> {
    let l = res.snap(half_length);
    let grid = res.grid(-l, l)?;
    let mut levels = Vec::with_capacity(halvings + 1);
    for k in 0..=halvings {
        let dt = dt0 / f64::powi(2.0, k as i32);
        let steps = ((t_range.1 - t_range.0) / dt).round() as usize;
        let ts: Vec<f64> = (0..=steps).map(|i| t_range.0 + i as f64 * dt).collect();
        let branches = window_branches(window, &ts, 64, |t| dislocated_operator(family, t, &grid, rule))?;
        let mut constant: f64 = 0.0;
        let mut used = 0;
        for b in &branches {
            if b.samples.len() >= 4 {
                constant = constant.max(branch_lipschitz_fit(b)?.lipschitz_constant);
                used += 1;
            }
        }
        levels.push(LipschitzLevel { dt, branches: used, constant });
    }
    let max_relative_change = levels
        .windows(2)
        .map(|w| if w[0].constant > 0.0 { (w[1].constant / w[0].constant - 1.0).abs() } else { f64::INFINITY })
        .fold(0.0, f64::max);
    Ok(LipschitzScan { levels, max_relative_change })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Interp {
    /// constant on `[x_i − hx/2, x_i + hx/2)`
    Constant,
    Linear,
}

/// A function on `ℝ × (ℝ/ℤ)` given on `nx` x-nodes and `ny` rows, extended
/// by its end values outside the node range.
#[derive(Clone, Debug, Serialize)]
pub struct GriddedFunction {
    pub x0: f64,
    pub hx: f64,
    pub nx: usize,
    pub ny: usize,
    /// `values[j * nx + i]`, row-major in y
    pub values: Vec<f64>,
    pub interp: Interp,
}

impl GriddedFunction {
    pub fn new(x0: f64, hx: f64, nx: usize, ny: usize, values: Vec<f64>, interp: Interp) -> Result<Self> {
        if nx < 2 || ny == 0 || values.len() != nx * ny || !(hx > 0.0) {
            return Err(Error::Domain(format!("gridded function needs nx >= 2, ny >= 1 and nx*ny values, got {nx}x{ny}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("gridded function has non-finite values".into()));
        }
        Ok(Self { x0, hx, nx, ny, values, interp })
    }

    /// One row per y from a profile in x.
    pub fn from_profile(f: impl Fn(f64) -> f64, x0: f64, hx: f64, nx: usize, interp: Interp) -> Result<Self> {
        Self::new(x0, hx, nx, 1, (0..nx).map(|i| f(x0 + i as f64 * hx)).collect(), interp)
    }

    pub fn hy(&self) -> f64 {
        1.0 / self.ny as f64
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.nx..(j + 1) * self.nx]
    }

    pub fn x_end(&self) -> f64 {
        self.x0 + (self.nx - 1) as f64 * self.hx
    }

    pub fn eval(&self, x: f64, j: usize) -> f64 {
        let r = self.row(j);
        let p = (x - self.x0) / self.hx;
        match self.interp {
            Interp::Constant => {
                let i = (p + 0.5).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
                r[i]
            }
            Interp::Linear => {
                if p <= 0.0 {
                    return r[0];
                }
                if p >= (self.nx - 1) as f64 {
                    return r[self.nx - 1];
                }
                let i = p.floor() as usize;
                let s = p - i as f64;
                r[i] * (1.0 - s) + r[i + 1] * s
            }
        }
    }

    /// `Σ |Δₓ W| · hy`, the total variation of `∂₁W` for either interpolant.
    pub fn total_variation(&self) -> f64 {
        (0..self.ny).map(|j| self.row(j).windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>()).sum::<f64>()
            * self.hy()
    }

    /// Abscissae where the interpolant is not smooth.
    fn kinks(&self) -> Vec<f64> {
        match self.interp {
            Interp::Linear => (0..self.nx).map(|i| self.x0 + i as f64 * self.hx).collect(),
            Interp::Constant => (0..self.nx - 1).map(|i| self.x0 + (i as f64 + 0.5) * self.hx).collect(),
        }
    }

    /// `‖W(· − s e₁) − W‖₁`, exact: the difference is piecewise linear
    /// (or constant) between the merged kinks.
    pub fn translation_l1(&self, s: f64) -> f64 {
        let mut knots = self.kinks();
        knots.extend(self.kinks().into_iter().map(|k| k + s));
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let mut total = 0.0;
        for j in 0..self.ny {
            let d = |x: f64| self.eval(x - s, j) - self.eval(x, j);
            for w in knots.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b <= a {
                    continue;
                }
                total += match self.interp {
                    Interp::Constant => d(0.5 * (a + b)).abs() * (b - a),
                    Interp::Linear => abs_linear_integral(d(a), d(b), b - a),
                };
            }
        }
        total * self.hy()
    }
}

/// `∫_0^len |f|` for `f` linear from `fa` to `fb`.
fn abs_linear_integral(fa: f64, fb: f64, len: f64) -> f64 {
    if fa * fb >= 0.0 {
        0.5 * (fa.abs() + fb.abs()) * len
    } else {
        let r = fa.abs() / (fa.abs() + fb.abs());
        0.5 * len * (fa.abs() * r + fb.abs() * (1.0 - r))
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BvReport {
    pub lhs: f64,
    pub total_variation: f64,
    pub alpha_sup: f64,
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// `‖W∘φ − W‖₁ ≤ 2 ‖∂₁W‖_TV ‖α‖_∞` for `φ(x, y) = (x + α(x), y)`.
pub fn bv_translation_bound(w: &GriddedFunction, phi: &Diffeomorphism, slack: f64) -> Result<BvReport> {
    let lo = w.x0.min(phi.inverse(w.x0)) - w.hx;
    let hi = w.x_end().max(phi.inverse(w.x_end())) + w.hx;
    let band = phi.band();
    let probe = phi_bounds(phi, band.0.min(lo), band.1.max(hi), 4001);
    if probe.max_deriv_deviation > 0.5 + 1e-12 {
        return Err(Error::Precondition(format!(
            "translation bound needs sup|α'| <= 1/2, found {}",
            probe.max_deriv_deviation
        )));
    }
    let alpha_sup = probe.max_displacement.max(phi.far_shift().abs());
    let mut knots = w.kinks();
    knots.extend(w.kinks().into_iter().map(|k| phi.inverse(k)));
    knots.extend([lo, hi, band.0, band.1]);
    knots.retain(|&k| k >= lo && k <= hi);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let rows: Vec<f64> = par::map_range(w.ny, |j| {
        adaptive(|x| (w.eval(phi.eval(x), j) - w.eval(x, j)).abs(), &knots, 1e-13, 1e-11, 200_000).value
    });
    let lhs = par::tree_sum(&rows) * w.hy();
    let tv = w.total_variation();
    let bound = 2.0 * tv * alpha_sup;
    Ok(BvReport { lhs, total_variation: tv, alpha_sup, bound, slack, holds: lhs <= bound * slack + 1e-14 })
}

#[derive(Clone, Debug, Serialize)]
pub struct TranslationReport {
    pub total_variation: f64,
    /// `(t, ‖f(· − t e₁) − f‖₁ / t)`
    pub ratios: Vec<(f64, f64)>,
    pub slack: f64,
    /// every ratio `≤ TV · slack`
    pub holds: bool,
    /// `|ratio − TV| / TV` at the smallest shift
    pub limit_gap: f64,
    /// ratios increase strictly as the shift decreases
    pub increasing: bool,
}

pub fn translation_lipschitz_probe(f: &GriddedFunction, t_list: &[f64], slack: f64) -> Result<TranslationReport> {
    if t_list.is_empty() || t_list.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Domain("translation probe needs positive shifts".into()));
    }
    let tv = f.total_variation();
    let mut ts = t_list.to_vec();
    ts.sort_by(|a, b| b.total_cmp(a));
    let ratios: Vec<(f64, f64)> = par::map(&ts, |&t| (t, f.translation_l1(t) / t));
    let holds = ratios.iter().all(|&(_, r)| r <= tv * slack + 1e-14);
    let last = ratios.last().unwrap().1;
    let limit_gap = if tv > 0.0 { (last - tv).abs() / tv } else { last };
    let increasing = ratios.windows(2).all(|w| w[1].1 > w[0].1);
    Ok(TranslationReport { total_variation: tv, ratios, slack, holds, limit_gap, increasing })
}

/// Random piecewise-linear functions on `[x0, x0 + (nx−1)hx]` with `ny`
/// rows, values uniform in `[−amp, amp]`.
pub fn random_pl_ensemble(
    seed: u64,
    count: usize,
    x0: f64,
    hx: f64,
    nx: usize,
    ny: usize,
    amp: f64,
) -> Result<Vec<GriddedFunction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = (0..nx * ny).map(|_| rng.random_range(-amp..=amp)).collect();
            GriddedFunction::new(x0, hx, nx, ny, v, Interp::Linear)
        })
        .collect()
}

/// Indicator of `{lo ≤ x < lo + w}` on cells of size `hx`.
pub fn strip_indicator(lo: f64, w: f64, hx: f64) -> Result<GriddedFunction> {
    let x0 = lo - 2.0 * hx;
    let nx = (w / hx).round() as usize + 4;
    GriddedFunction::from_profile(
        |x| if x >= lo - 1e-12 && x < lo + w - 1e-12 { 1.0 } else { 0.0 },
        x0 + 0.5 * hx,
        hx,
        nx,
        Interp::Constant,
    )
}

/// `exp(−1/(1 − x²))` on `(−1, 1)`, sampled at spacing `hx`.
pub fn smooth_bump(hx: f64) -> Result<GriddedFunction> {
    let nx = (2.0 / hx).round() as usize + 1;
    GriddedFunction::from_profile(
        |x| if x.abs() < 1.0 { (-1.0 / (1.0 - x * x)).exp() } else { 0.0 },
        -1.0,
        hx,
        nx,
        Interp::Linear,
    )
}

/// `x sin(1/x)` on `[−1, 1]`, a profile of unbounded variation, sampled at `hx`.
pub fn oscillating_profile(hx: f64) -> Result<GriddedFunction> {
    let nx = (2.0 / hx).round() as usize + 1;
    GriddedFunction::from_profile(|x| if x == 0.0 { 0.0 } else { x * (1.0 / x).sin() }, -1.0, hx, nx, Interp::Linear)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Preset;

    #[test]
    fn identity_at_zero() {
        let p = build_phi(0.0, 1.0).unwrap();
        for k in 0..50 {
            let x = -3.0 + 0.13 * k as f64;
            assert_eq!(p.eval(x), x);
            assert_eq!(p.deriv(x), 1.0);
            assert_eq!(p.second(x), 0.0);
        }
    }

    #[test]
    fn flat_regions() {
        let p = build_phi(0.3, 0.5).unwrap();
        assert_eq!(p.eval(-0.6), -0.6);
        assert!((p.eval(1.5) - 1.8).abs() < 1e-12);
        assert!((p.eval(4.0) - 4.3).abs() < 1e-12);
        let m = p.mirrored();
        assert_eq!(m.eval(0.6), 0.6);
        assert!((m.eval(-2.0) + 2.3).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_difference() {
        let p = build_phi(0.4, 1.0).unwrap();
        let h = 1e-5;
        for k in 0..40 {
            let x = -1.2 + 0.09 * k as f64;
            let fd = (p.eval(x + h) - p.eval(x - h)) / (2.0 * h);
            assert!((fd - p.deriv(x)).abs() < 1e-8, "x = {x}");
            let fd2 = (p.deriv(x + h) - p.deriv(x - h)) / (2.0 * h);
            assert!((fd2 - p.second(x)).abs() < 1e-7, "x = {x}");
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let p = build_phi(-0.45, 1.0).unwrap().mirrored();
        for k in 0..60 {
            let y = -4.0 + 0.13 * k as f64;
            assert!((p.eval(p.inverse(y)) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transformed_is_plain_at_zero() {
        let fam = DislocationFamily::preset(Preset::Mathieu { q: 2.0, phase: 0.0 });
        let res = Resolution::new(0.125, 4).unwrap();
        let g = res.grid(-3.0, 3.0).unwrap();
        let c = assemble_transformed_operator(0.0, &fam, &g, 1.0, PotentialRule::Sample).unwrap();
        let v = sample_dislocation(&fam, 0.0, &g).unwrap();
        let h = crate::operator::assemble_hamiltonian(&g, &v, &[], Vec::new()).unwrap();
        assert_eq!(c, h);
    }

    #[test]
    fn strip_translation_exact() {
        let f = strip_indicator(0.0, 1.0, 0.05).unwrap();
        assert!((f.total_variation() - 2.0).abs() < 1e-12);
        for t in [0.1, 0.35] {
            assert!((f.translation_l1(t) - 2.0 * t).abs() < 1e-12);
        }
    }
}
