//! Shift-invert Lanczos with full reorthogonalization and deflated restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tridiag::eigh_tridiagonal;
use crate::error::{Error, Result};

/// One converged eigenpair.
#[derive(Clone, Debug)]
pub struct Pair {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
}

pub struct WindowProblem<'a> {
    pub dim: usize,
    /// `x ← (H - σ)⁻¹ x`
    pub solve: &'a (dyn Fn(&mut [f64]) + Sync),
    /// `H x`
    pub apply: &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync),
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
    /// number of eigenvalues known to lie in `[lo, hi]`
    pub target: usize,
    /// accepted residual `‖Hu − λu‖`
    pub tol: f64,
    pub seed: u64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for v in basis {
            let c = dot(v, w);
            axpy(w, -c, v);
        }
    }
}

fn rayleigh(apply: &(dyn Fn(&[f64]) -> Vec<f64> + Sync), u: &[f64]) -> (f64, f64) {
    let hu = apply(u);
    let lam = dot(u, &hu);
    let r = hu.iter().zip(u).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt();
    (lam, r)
}

/// All `target` eigenpairs of `H` in `[lo, hi]`, ascending.
pub fn window_pairs(p: &WindowProblem) -> Result<Vec<Pair>> {
    let mut found: Vec<Pair> = Vec::new();
    if p.target == 0 {
        return Ok(found);
    }
    let n = p.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut stalled = 0;
    for _round in 0..4 * p.target + 20 {
        if found.len() >= p.target {
            break;
        }
        let locked: Vec<Vec<f64>> = found.iter().map(|q| q.vector.clone()).collect();
        let room = n - locked.len();
        if room == 0 {
            break;
        }
        let max_basis = room.min((3 * (p.target - found.len()) + 60).min(400));
        let mut v0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthogonalize(&mut v0, &locked);
        let nv = dot(&v0, &v0).sqrt();
        if nv == 0.0 {
            break;
        }
        v0.iter_mut().for_each(|x| *x /= nv);
        let mut basis: Vec<Vec<f64>> = vec![v0];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut accepted: Vec<Pair> = Vec::new();
        loop {
            let j = basis.len() - 1;
            let mut w = basis[j].clone();
            (p.solve)(&mut w);
            orthogonalize(&mut w, &locked);
            let a = dot(&basis[j], &w);
            axpy(&mut w, -a, &basis[j]);
            if j > 0 {
                axpy(&mut w, -beta[j - 1], &basis[j - 1]);
            }
            orthogonalize(&mut w, &basis);
            orthogonalize(&mut w, &locked);
            alpha.push(a);
            let b = dot(&w, &w).sqrt();
            let scale = alpha.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
            let breakdown = b <= 1e-13 * scale;
            let full = basis.len() >= max_basis;
            let check = breakdown || full || (basis.len() >= 10 && basis.len() % 10 == 0);
            if check {
                let (theta, s) = eigh_tridiagonal(&alpha, &beta);
                let m = alpha.len();
                let mut cand: Vec<Pair> = Vec::new();
                for k in 0..m {
                    let th = theta[k];
                    if th == 0.0 {
                        continue;
                    }
                    let guess = p.sigma + 1.0 / th;
                    let margin = 1e-6 * (p.hi - p.lo).abs().max(1e-12);
                    if guess < p.lo - margin || guess > p.hi + margin {
                        continue;
                    }
                    // cheap residual estimate in the inverted operator
                    let est = (b * s[(m - 1) * m + k]).abs();
                    if !breakdown && est > 1e-6 * th.abs() {
                        continue;
                    }
                    let mut u = vec![0.0; n];
                    for (i, v) in basis.iter().enumerate().take(m) {
                        axpy(&mut u, s[i * m + k], v);
                    }
                    orthogonalize(&mut u, &locked);
                    let nu = dot(&u, &u).sqrt();
                    u.iter_mut().for_each(|x| *x /= nu);
                    let (lam, res) = rayleigh(p.apply, &u);
                    if res <= p.tol && lam >= p.lo && lam <= p.hi {
                        cand.push(Pair { value: lam, vector: u, residual: res });
                    }
                }
                if found.len() + cand.len() >= p.target || breakdown || full {
                    accepted = cand;
                    break;
                }
            }
            if breakdown {
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|x| *x /= b);
            basis.push(w);
        }
        if accepted.is_empty() {
            stalled += 1;
            if stalled > 6 {
                break;
            }
        } else {
            stalled = 0;
        }
        for mut q in accepted {
            if found.len() >= p.target {
                break;
            }
            // re-orthogonalize against pairs accepted in this round
            let prev: Vec<Vec<f64>> = found.iter().map(|f| f.vector.clone()).collect();
            orthogonalize(&mut q.vector, &prev);
            let nq = dot(&q.vector, &q.vector).sqrt();
            if nq < 0.5 {
                continue;
            }
            q.vector.iter_mut().for_each(|x| *x /= nq);
            let (lam, res) = rayleigh(p.apply, &q.vector);
            if res <= p.tol {
                q.value = lam;
                q.residual = res;
                found.push(q);
            }
        }
    }
    if found.len() < p.target {
        return Err(Error::NoConvergence(format!(
            "shift-invert Lanczos found {} of {} eigenpairs in [{}, {}]",
            found.len(),
            p.target,
            p.lo,
            p.hi
        )));
    }
    found.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(found)
}
