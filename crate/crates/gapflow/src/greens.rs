//! Free resolvent kernels on the tube `S′ = ℝ × (ℝ/ℤ)` and the kernel of the
//! Dirichlet decoupling difference.
//!
//! Kernels are those of `(−Δ + 1)⁻¹`, which in the plane is `K₀(|x − y|)/(2π)`.
//! Points are `(x1, x2)` with `x1` along the axis and `x2` the periodic
//! coordinate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::quad::{gauss, gauss_legendre};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Modified Bessel function of the second kind, order zero.
///
/// Power series with the logarithmic term for `r ≤ 2`. Beyond, the trapezoidal
/// rule on `K₀(r) = e^{−r} ∫₀^∞ exp(−2r sinh²(s/2)) ds`, which converges
/// geometrically in the step because the integrand is even and analytic.
pub fn bessel_k0(r: f64) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain(format!("K0 needs a finite positive argument, got {r}")));
    }
    if r <= 2.0 {
        let q = 0.25 * r * r;
        let mut term = 1.0;
        let mut i0 = 1.0;
        let mut tail = 0.0;
        let mut harmonic = 0.0;
        for k in 1..200 {
            let kf = k as f64;
            term *= q / (kf * kf);
            harmonic += 1.0 / kf;
            i0 += term;
            tail += term * harmonic;
            if term * harmonic < 1e-18 * tail.max(1e-300) {
                break;
            }
        }
        Ok(-((0.5 * r).ln() + EULER_GAMMA) * i0 + tail)
    } else {
        let h = 0.125;
        let f = |s: f64| (-2.0 * r * (0.5 * s).sinh().powi(2)).exp();
        let mut sum = 0.5 * f(0.0);
        let mut j = 1;
        loop {
            let v = f(j as f64 * h);
            sum += v;
            if v < 1e-18 * sum {
                break;
            }
            j += 1;
        }
        Ok((-r).exp() * h * sum)
    }
}

/// Constants of `K₀(r) ≤ c(1 + |log r|)` on `(0, 1]` and `K₀(r) ≤ c e^{−r}` on
/// `[1, ∞)`, fitted as the largest ratios over the sample points.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct K0Bounds {
    pub c_small: f64,
    pub c_large: f64,
}

impl K0Bounds {
    pub fn c(&self) -> f64 {
        self.c_small.max(self.c_large)
    }

    pub fn holds(&self, r: f64, k0: f64) -> bool {
        let c = self.c() * (1.0 + 1e-12);
        if r <= 1.0 {
            k0 <= c * (1.0 + r.ln().abs())
        } else {
            k0 <= c * (-r).exp()
        }
    }
}

/// Fits both constants over `samples`. `K₀(r)/(1 + |log r|)` and `K₀(r) eʳ`
/// both decrease, so `r = 1` joins the sample points whenever the samples
/// reach past it, and the fitted constants then bound `K₀` on the whole
/// sampled range, not only at the samples.
pub fn fit_k0_bounds(samples: &[f64]) -> Result<K0Bounds> {
    let mut c_small = 0.0f64;
    let mut c_large = 0.0f64;
    let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    let extra = if lo < 1.0 && hi > 1.0 { Some(1.0) } else { None };
    for &r in samples.iter().chain(extra.iter()) {
        let k = bessel_k0(r)?;
        if r <= 1.0 {
            c_small = c_small.max(k / (1.0 + r.ln().abs()));
        }
        if r >= 1.0 {
            c_large = c_large.max(k * r.exp());
        }
    }
    Ok(K0Bounds { c_small, c_large })
}

/// `sup_{r ≥ 1} K₀(r) eʳ`, attained at `r = 1` since `K₀(r) eʳ` decreases.
pub fn k0_exp_constant() -> f64 {
    bessel_k0(1.0).unwrap() * 1f64.exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GreensEval {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub value: f64,
    pub images_used: usize,
    pub tail_bound: f64,
}

fn wrap_half(d: f64) -> f64 {
    d - d.round()
}

/// Number of image pairs `K` for which the neglected images are below `tol`.
fn images_for(tol: f64) -> (usize, f64) {
    let c = k0_exp_constant() / (2.0 * PI);
    // for |k| ≥ K + 1 the image distance is at least |k| − 1/2 ≥ 1
    let tail = |k: usize| 2.0 * c * (-(k as f64 + 0.5)).exp() / (1.0 - (-1f64).exp());
    let mut k = 1;
    while tail(k) > tol && k < 200 {
        k += 1;
    }
    (k, tail(k))
}

fn image_sum(dx: f64, d: f64, images: usize) -> Result<f64> {
    let d = wrap_half(d);
    let mut s = 0.0;
    for k in -(images as i64)..=(images as i64) {
        let dy = d + k as f64;
        s += bessel_k0((dx * dx + dy * dy).sqrt())?;
    }
    Ok(s / (2.0 * PI))
}

/// `G_{S′}(x, y) = (2π)⁻¹ Σ_k K₀(|x + k e₂ − y|)`.
pub fn tube_green(x: (f64, f64), y: (f64, f64), tol: f64) -> Result<GreensEval> {
    let dx = x.0 - y.0;
    let d = wrap_half(x.1 - y.1);
    if dx == 0.0 && d == 0.0 {
        return Err(Error::Domain(format!("tube Green function is singular at x = y = {x:?}")));
    }
    let (images, tail_bound) = images_for(tol);
    Ok(GreensEval { x, y, value: image_sum(dx, d, images)?, images_used: 2 * images + 1, tail_bound })
}

/// `K(x, y) = G_{S′}(x, y) − G_{S′,dec}(x, y)` for a Dirichlet cut at `x1 = 0`:
/// `G_{S′}(x*, y)` on one side, `G_{S′}(x, y)` across.
pub fn decoupled_green_diff(x: (f64, f64), y: (f64, f64), tol: f64) -> Result<f64> {
    if x.0 == 0.0 || y.0 == 0.0 {
        return Err(Error::Domain("decoupled kernel is not defined on the cut".into()));
    }
    if (x.0 > 0.0) == (y.0 > 0.0) {
        Ok(tube_green((-x.0, x.1), y, tol)?.value)
    } else {
        Ok(tube_green(x, y, tol)?.value)
    }
}

/// The decoupled resolvent kernel itself, zero across the cut.
pub fn decoupled_green(x: (f64, f64), y: (f64, f64), tol: f64) -> Result<f64> {
    if x.0 == 0.0 || y.0 == 0.0 {
        return Err(Error::Domain("decoupled kernel is not defined on the cut".into()));
    }
    if (x.0 > 0.0) != (y.0 > 0.0) {
        return Ok(0.0);
    }
    Ok(tube_green(x, y, tol)?.value - tube_green((-x.0, x.1), y, tol)?.value)
}

// ---------------------------------------------------------------------------
// Hilbert–Schmidt norm of K

/// Product Gauss–Legendre quadrature on panels graded geometrically towards
/// the logarithmic corner `x1 + y1 = 0, x2 = y2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsQuadrature {
    /// nodes per panel and direction
    pub order: usize,
    /// number of halvings towards the corner
    pub grading: usize,
    /// `x1 + y1` is integrated up to this value
    pub s_max: f64,
    /// image pairs kept in the kernel
    pub images: usize,
    /// maximum number of panel pairs
    pub budget: usize,
}

impl Default for HsQuadrature {
    fn default() -> Self {
        Self { order: 12, grading: 16, s_max: 20.0, images: 24, budget: 100_000 }
    }
}

impl HsQuadrature {
    /// One step finer in every parameter.
    pub fn refined(&self) -> Self {
        Self { order: self.order + 4, grading: self.grading + 4, s_max: self.s_max + 4.0, ..*self }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HsNorm {
    pub value: f64,
    pub squared: f64,
    pub panels: usize,
    /// the budget ran out before every panel was integrated
    pub partial: bool,
}

fn graded(a: f64, b: f64, levels: usize) -> Vec<(f64, f64)> {
    // [a, a + w 2^{-L}], ..., [a + w/2, b]
    let w = b - a;
    let mut out = vec![(a, a + w * 0.5f64.powi(levels as i32))];
    for l in (0..levels).rev() {
        out.push((a + w * 0.5f64.powi(l as i32 + 1), a + w * 0.5f64.powi(l as i32)));
    }
    out
}

/// `‖K‖²_{L₂(S′×S′)}` restricted to `x1 + y1 ≥ s_min` on each side.
///
/// On every pair of half-lines `K` depends only on `s = |x1| + |y1|` and
/// `d = x2 − y2`, through `F(s, d) = (2π)⁻¹ Σ_k K₀(√(s² + (d + k)²))`, so
/// `‖K‖² = 4 ∫ s ∫₀¹ F(s, d)² dd ds`, and `F(s, d) = F(s, 1 − d)` halves the
/// `d` range.
pub fn kernel_hs_norm_region(q: &HsQuadrature, s_min: f64) -> Result<HsNorm> {
    if q.order < 2 || q.s_max <= s_min.max(1.0) {
        return Err(Error::Config(format!("invalid HS quadrature {q:?}")));
    }
    let mut s_panels = Vec::new();
    if s_min < 1.0 {
        if s_min <= 0.0 {
            s_panels.extend(graded(0.0, 1.0, q.grading));
        } else {
            s_panels.push((s_min, 1.0));
        }
    }
    let mut a = s_min.max(1.0);
    while a < q.s_max - 1e-12 {
        let b = (a + 1.0).min(q.s_max);
        s_panels.push((a, b));
        a = b;
    }
    let d_panels = graded(0.0, 0.5, q.grading);
    let pairs: Vec<((f64, f64), (f64, f64))> =
        s_panels.iter().flat_map(|&sp| d_panels.iter().map(move |&dp| (sp, dp))).collect();
    let partial = pairs.len() > q.budget;
    let pairs = &pairs[..pairs.len().min(q.budget)];
    let rule = gauss_legendre(q.order);
    let images = q.images;
    // Gauss nodes are interior, so s > 0 and the image sum is regular
    let parts: Vec<f64> = par::map(pairs, |&((s0, s1), (d0, d1))| {
        gauss(
            |s| s * gauss(|d| image_sum(s, d, images).map_or(f64::NAN, |f| f * f), d0, d1, &rule),
            s0,
            s1,
            &rule,
        )
    });
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence("HS quadrature produced a non-finite panel".into()));
    }
    let squared = 8.0 * par::tree_sum(&parts);
    Ok(HsNorm { value: squared.sqrt(), squared, panels: pairs.len(), partial })
}

pub fn kernel_hs_norm(q: &HsQuadrature) -> Result<HsNorm> {
    kernel_hs_norm_region(q, 0.0)
}

/// Bound on `‖K‖` over `x1 + y1 ≥ 1` from `K ≤ (2π)⁻¹ c (3 e^{−s} + 2 Σ_{k≥1}
/// e^{−√(s²+k²)})` on each of the four side pairs, Minkowski's inequality
/// over the terms and `∫∫ e^{−2√(s²+k²)} ≤ (5/4) k² e^{−2k}`
/// (`∫_{s≥1} s e^{−2s} ds = (3/4) e^{−2}` for the first term).
pub fn region_bound(c: f64) -> f64 {
    let mut sum = 3.0 * (0.75 * (-2.0f64).exp()).sqrt();
    for k in 1..200 {
        let kf = k as f64;
        sum += 2.0 * (1.25 * kf * kf * (-2.0 * kf).exp()).sqrt();
    }
    2.0 * c / (2.0 * PI) * sum
}

/// Kernel samples `(x1, x2, y1, y2, value)` of `K` on a regular grid of
/// points, skipping the cut.
pub fn kernel_samples(kind: KernelKind, x1: &[f64], x2: &[f64], y: (f64, f64), tol: f64) -> Result<Vec<[f64; 5]>> {
    let mut out = Vec::new();
    for &a in x1 {
        for &b in x2 {
            let v = match kind {
                KernelKind::Tube => {
                    if a == y.0 && wrap_half(b - y.1) == 0.0 {
                        continue;
                    }
                    tube_green((a, b), y, tol)?.value
                }
                KernelKind::Difference => {
                    if a == 0.0 || y.0 == 0.0 {
                        continue;
                    }
                    decoupled_green_diff((a, b), y, tol)?
                }
            };
            out.push([a, b, y.0, y.1, v]);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Tube,
    Difference,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k0_reference_value() {
        assert!((bessel_k0(1.0).unwrap() - 0.421_024_438_240_708_3).abs() < 1e-14);
    }

    #[test]
    fn branches_meet() {
        let a = bessel_k0(2.0).unwrap();
        let b = bessel_k0(2.0 + 1e-12).unwrap();
        assert!((a - b).abs() < 1e-11 * a);
    }

    #[test]
    fn hs_matches_mode_sum() {
        // Σ_m 1/(4 μ_m⁴), μ_m² = 1 + (2πm)²
        let exact: f64 = (-50i32..=50).map(|m| 0.25 / (1.0 + (2.0 * PI * m as f64).powi(2)).powi(2)).sum();
        let hs = kernel_hs_norm(&HsQuadrature::default()).unwrap();
        assert!((hs.squared - exact).abs() < 1e-6 * exact, "{} vs {}", hs.squared, exact);
    }
}
