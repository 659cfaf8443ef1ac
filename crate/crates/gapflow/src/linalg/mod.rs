//! Factorizations behind inertia counting and shift-invert solves.

pub mod bk;
pub mod block;
pub mod lanczos;
pub mod tridiag;

use crate::error::{Error, Result};
use crate::operator::DiscreteOperator;
use bk::{BkFactor, Inertia};
use block::BlockLdl;

/// Relative pivot size below which a shift is treated as an eigenvalue.
pub const PIVOT_TOL: f64 = 1e-12;

/// `op - shift` factored, low-rank terms included through a bordered
/// system: with `A = H - shift` and the terms written `U C Uᵀ`,
/// `neg(A + U C Uᵀ) = neg(A) + neg(-C⁻¹ - Uᵀ A⁻¹ U) - #{c > 0}`
/// and solves use the Woodbury identity on the same capacitance matrix.
pub struct ShiftedFactor {
    pub shift: f64,
    pub inertia: Inertia,
    base: BlockLdl,
    u: Vec<Vec<f64>>,
    ainv_u: Vec<Vec<f64>>,
    cap: Option<BkFactor>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ShiftedFactor {
    /// Fails with [`Error::NearSingular`] when a pivot falls below
    /// `PIVOT_TOL · ‖H‖`, i.e. when `shift` is numerically an eigenvalue.
    pub fn new(op: &DiscreteOperator, shift: f64, keep: bool) -> Result<Self> {
        let norm = op.norm_bound().max(shift.abs()).max(1e-300);
        let threshold = PIVOT_TOL * norm;
        let lr: Vec<(Vec<f64>, f64)> = op.lowrank_active().into_iter().filter(|(_, c)| *c != 0.0).collect();
        let keep = keep || !lr.is_empty();
        let base = BlockLdl::factor(op, shift, threshold, keep);
        if base.inertia.min_pivot <= threshold {
            return Err(Error::NearSingular { shift, pivot: base.inertia.min_pivot, threshold });
        }
        let mut inertia = base.inertia;
        let mut ainv_u = Vec::new();
        let mut u = Vec::new();
        let mut cap = None;
        if !lr.is_empty() {
            let r = lr.len();
            for (v, _) in &lr {
                let mut w = v.clone();
                base.solve(&mut w);
                ainv_u.push(w);
                u.push(v.clone());
            }
            // K = C⁻¹ + Uᵀ A⁻¹ U
            let mut k = vec![0.0; r * r];
            for a in 0..r {
                for b in 0..=a {
                    let v = 0.5 * (dot(&u[a], &ainv_u[b]) + dot(&u[b], &ainv_u[a]));
                    k[a * r + b] = v;
                    k[b * r + a] = v;
                }
                k[a * r + a] += 1.0 / lr[a].1;
            }
            let kscale = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let f = BkFactor::new(k, r);
            let ki = f.inertia(PIVOT_TOL * kscale);
            if ki.min_pivot <= PIVOT_TOL * kscale {
                return Err(Error::NearSingular { shift, pivot: ki.min_pivot, threshold: PIVOT_TOL * kscale });
            }
            let n_pos_c = lr.iter().filter(|(_, c)| *c > 0.0).count();
            // neg(-K) = pos(K)
            let neg = inertia.neg + ki.pos - n_pos_c;
            inertia.neg = neg;
            inertia.pos = op.dim() - neg;
            inertia.two_by_two += ki.two_by_two;
            cap = Some(f);
        }
        Ok(Self { shift, inertia, base, u, ainv_u, cap })
    }

    /// Number of eigenvalues strictly below the shift.
    pub fn count_below(&self) -> usize {
        self.inertia.neg
    }

    /// Solves `(op - shift) x = b` in place. The factor must have been
    /// built with `keep`.
    pub fn solve(&self, b: &mut [f64]) {
        self.base.solve(b);
        if let Some(cap) = &self.cap {
            let mut z: Vec<f64> = self.u.iter().map(|u| dot(u, b)).collect();
            cap.solve(&mut z);
            for (w, zk) in self.ainv_u.iter().zip(&z) {
                for (bi, wi) in b.iter_mut().zip(w) {
                    *bi -= zk * wi;
                }
            }
        }
    }
}
