//! Band structure of separable periodic tube operators.
//!
//! For `V(x, y) = V1(x) + V2(y)` with `V1` periodic, the discrete tube
//! operator is a Kronecker sum, so its spectrum on the infinite line is the
//! algebraic sum of the bands of the 1-d chain `h1` and the eigenvalues of
//! the transverse ring `h2`. Bands of `h1` are read off the discriminant
//! `D(λ) = tr M(λ)` of the one-period transfer matrix (`|D| ≤ 2` on bands).

use faer::Mat;

use crate::eigensolve::dense_eigenvalues;
use crate::error::{Error, Result};

/// One period of a discrete periodic chain with spacing `h`.
#[derive(Clone, Debug)]
pub struct FloquetChain {
    pub h: f64,
    pub v: Vec<f64>,
}

impl FloquetChain {
    /// Samples `v1` at `offset + i·h` for one period of `steps` nodes.
    pub fn new(v1: impl Fn(f64) -> f64, h: f64, steps: usize, offset: f64) -> Result<Self> {
        if steps == 0 || h <= 0.0 {
            return Err(Error::Domain("a Floquet chain needs a positive period".into()));
        }
        Ok(Self { h, v: (0..steps).map(|i| v1(offset + i as f64 * h)).collect() })
    }

    /// `tr M(λ)` for `u_{i+1} = (2 + h²(V_i − λ)) u_i − u_{i−1}`.
    pub fn discriminant(&self, lambda: f64) -> f64 {
        let h2 = self.h * self.h;
        // columns of M evolved from (u_0, u_{-1}) = (1, 0) and (0, 1)
        let (mut a0, mut a1) = (1.0, 0.0);
        let (mut b0, mut b1) = (0.0, 1.0);
        for &vi in &self.v {
            let c = 2.0 + h2 * (vi - lambda);
            let na = c * a0 - a1;
            let nb = c * b0 - b1;
            a1 = a0;
            a0 = na;
            b1 = b0;
            b0 = nb;
        }
        a0 + b1
    }

    /// All bands of the chain, ascending.
    pub fn bands(&self) -> Vec<(f64, f64)> {
        let vmin = self.v.iter().copied().fold(f64::INFINITY, f64::min);
        let vmax = self.v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vmin - 1e-9;
        let hi = vmax + 4.0 / (self.h * self.h) + 1e-9;
        // each band holds one zero of D − 2 or D + 2 at each end; a scan at
        // a resolution well below the narrowest band finds them all
        let steps = 400 * self.v.len().max(8);
        let g = |l: f64| self.discriminant(l).abs() - 2.0;
        let mut out = Vec::new();
        let mut start: Option<f64> = None;
        let mut prev_l = lo;
        let mut prev = g(lo);
        if prev <= 0.0 {
            start = Some(lo);
        }
        for k in 1..=steps {
            let l = lo + (hi - lo) * k as f64 / steps as f64;
            let cur = g(l);
            if (prev > 0.0) != (cur > 0.0) {
                let edge = bisect(&g, prev_l, l);
                if cur <= 0.0 {
                    start = Some(edge);
                } else if let Some(s) = start.take() {
                    out.push((s, edge));
                }
            }
            prev = cur;
            prev_l = l;
        }
        if let Some(s) = start {
            out.push((s, hi));
        }
        merge(out, 1e-12)
    }
}

fn bisect(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let sa = g(a) > 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if (g(m) > 0.0) == sa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Unions overlapping intervals; gaps narrower than `tol` are closed.
pub fn merge(mut iv: Vec<(f64, f64)>, tol: f64) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 + tol => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Eigenvalues of the transverse ring `-Δ_y + V2` with `ny` nodes.
pub fn transverse_eigenvalues(v2: &[f64]) -> Result<Vec<f64>> {
    let ny = v2.len();
    let hy = 1.0 / ny as f64;
    let w = 1.0 / (hy * hy);
    if v2.iter().all(|&v| v == 0.0) {
        let mut mu: Vec<f64> = (0..ny)
            .map(|k| {
                let s = (std::f64::consts::PI * k as f64 / ny as f64).sin();
                4.0 * w * s * s
            })
            .collect();
        mu.sort_by(f64::total_cmp);
        return Ok(mu);
    }
    let mut m = Mat::<f64>::zeros(ny, ny);
    for j in 0..ny {
        m[(j, j)] = 2.0 * w + v2[j];
        let jp = (j + 1) % ny;
        m[(j, jp)] -= w;
        m[(jp, j)] -= w;
    }
    let mut e = dense_eigenvalues(&m)?;
    e.sort_by(f64::total_cmp);
    Ok(e)
}

/// Spectrum of the separable tube operator: `⋃_k (bands + μ_k)`.
pub fn tube_bands(bands: &[(f64, f64)], mu: &[f64]) -> Vec<(f64, f64)> {
    let mut all = Vec::with_capacity(bands.len() * mu.len());
    for &m in mu {
        for &(a, b) in bands {
            all.push((a + m, b + m));
        }
    }
    merge(all, 0.0)
}

/// Open gaps of `spectrum` that lie within `[lo, hi]`, widest-first order
/// not implied; intervals are ascending.
pub fn gaps_between(spectrum: &[(f64, f64)], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    spectrum
        .windows(2)
        .map(|w| (w[0].1, w[1].0))
        .filter(|&(a, b)| b > a && a >= lo && b <= hi)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_chain_is_one_band() {
        let c = FloquetChain::new(|_| 0.0, 0.1, 10, 0.0).unwrap();
        let b = c.bands();
        assert_eq!(b.len(), 1);
        assert!(b[0].0.abs() < 1e-8);
        assert!((b[0].1 - 400.0).abs() < 1e-6);
    }

    #[test]
    fn mathieu_opens_gaps() {
        let q = 2.0;
        let c = FloquetChain::new(|x| 2.0 * q * (2.0 * std::f64::consts::PI * x).cos(), 1.0 / 32.0, 32, 0.0).unwrap();
        let b = c.bands();
        assert!(b.len() >= 3);
        // the first gap straddles π² for moderate q
        let g = (b[0].1, b[1].0);
        assert!(g.0 < 9.87 && g.1 > 9.87, "{g:?}");
    }

    #[test]
    fn free_transverse_modes() {
        let mu = transverse_eigenvalues(&[0.0; 8]).unwrap();
        assert!(mu[0].abs() < 1e-12);
        let s = (std::f64::consts::PI / 8.0).sin();
        assert!((mu[1] - 256.0 * s * s).abs() < 1e-9);
    }
}
