//! Block LDLᵀ of shifted tube operators.
//!
//! Lines are grouped into blocks that form a chain: one line per block for
//! Dirichlet layouts, and folded pairs `(k, m-1-k)` when the x-direction is
//! periodic, which turns the ring into a chain without fill. The Schur
//! recursion `S_{k+1} = A_{k+1} - Bᵀ S_k⁻¹ B` runs along the chain, each
//! `S_k` is factored with Bunch–Kaufman, and Haynsworth additivity sums the
//! block inertias into the inertia of the whole matrix.

use super::bk::{BkFactor, Inertia};
use crate::operator::DiscreteOperator;

struct Block {
    lines: Vec<usize>,
    /// offset of each line in the active vector
    offs: Vec<usize>,
}

/// Coupling `(local line in k, local line in k+1, weight)`.
type Link = (usize, usize, f64);

pub struct BlockLdl {
    pub inertia: Inertia,
    ny: usize,
    dim: usize,
    blocks: Vec<Block>,
    links: Vec<Vec<Link>>,
    /// explicit inverses of the Schur blocks, kept only when solves are needed
    inverses: Option<Vec<Vec<f64>>>,
}

fn plan(op: &DiscreteOperator) -> (Vec<Block>, Vec<Vec<Link>>) {
    let nl = op.lines();
    let offs = op.offsets();
    let groups: Vec<Vec<usize>> = if op.is_periodic_x() && nl > 2 {
        (0..nl.div_ceil(2))
            .map(|k| if k == nl - 1 - k { vec![k] } else { vec![k, nl - 1 - k] })
            .collect()
    } else {
        (0..nl).map(|k| vec![k]).collect()
    };
    let blocks: Vec<Block> = groups
        .into_iter()
        .map(|g| {
            let lines: Vec<usize> = g.into_iter().filter(|&l| op.is_active(l)).collect();
            let o = lines.iter().map(|&l| offs[l].unwrap()).collect();
            Block { lines, offs: o }
        })
        .collect();
    let mut links = Vec::with_capacity(blocks.len());
    for k in 0..blocks.len().saturating_sub(1) {
        let mut v = Vec::new();
        for (ia, &la) in blocks[k].lines.iter().enumerate() {
            for (ib, &lb) in blocks[k + 1].lines.iter().enumerate() {
                if la.abs_diff(lb) == 1 {
                    let w = op.coupling(la, lb);
                    if w != 0.0 {
                        v.push((ia, ib, w));
                    }
                }
            }
        }
        links.push(v);
    }
    (blocks, links)
}

/// Dense diagonal block of `op - shift` for the given lines, row-major.
fn diagonal_block(op: &DiscreteOperator, lines: &[usize], shift: f64) -> Vec<f64> {
    let ny = op.ny();
    let n = lines.len() * ny;
    let mut a = vec![0.0; n * n];
    let diag = op.diag_full();
    for (il, &l) in lines.iter().enumerate() {
        let t = op.ty(l);
        for j in 0..ny {
            let r = il * ny + j;
            a[r * n + r] = diag[l * ny + j] - shift;
            let c = il * ny + (j + 1) % ny;
            a[r * n + c] -= t;
            a[c * n + r] -= t;
        }
    }
    if lines.len() == 2 {
        let w = op.coupling(lines[0], lines[1]);
        if w != 0.0 {
            for j in 0..ny {
                a[j * n + ny + j] -= w;
                a[(ny + j) * n + j] -= w;
            }
        }
    }
    a
}

impl BlockLdl {
    /// Factors `op - shift` without its low-rank terms. Pivots at or below
    /// `zero_tol` count as zero. With `keep` the block inverses are retained
    /// for [`solve`](Self::solve).
    pub fn factor(op: &DiscreteOperator, shift: f64, zero_tol: f64, keep: bool) -> Self {
        let ny = op.ny();
        let (blocks, links) = plan(op);
        let mut inertia = Inertia::empty();
        let mut kept = keep.then(Vec::new);
        let mut carry: Option<Vec<f64>> = None; // S_k⁻¹ of the previous block
        for k in 0..blocks.len() {
            let b = &blocks[k];
            let n = b.lines.len() * ny;
            if n == 0 {
                carry = None;
                if let Some(v) = kept.as_mut() {
                    v.push(Vec::new());
                }
                continue;
            }
            let mut s = diagonal_block(op, &b.lines, shift);
            if k > 0 {
                if let Some(prev) = carry.take() {
                    let np = blocks[k - 1].lines.len() * ny;
                    for &(ia, ib, w) in &links[k - 1] {
                        for &(ja, jb, v) in &links[k - 1] {
                            let f = w * v;
                            for r in 0..ny {
                                let pr = &prev[(ia * ny + r) * np + ja * ny..(ia * ny + r) * np + ja * ny + ny];
                                let sr = &mut s[(ib * ny + r) * n + jb * ny..(ib * ny + r) * n + jb * ny + ny];
                                for (sv, pv) in sr.iter_mut().zip(pr) {
                                    *sv -= f * pv;
                                }
                            }
                        }
                    }
                }
            }
            let f = BkFactor::new(s, n);
            inertia.add(&f.inertia(zero_tol));
            let last = k + 1 == blocks.len();
            let need_inv = (!last && !links[k].is_empty()) || keep;
            let inv = if need_inv { Some(f.inverse()) } else { None };
            if let Some(v) = kept.as_mut() {
                v.push(inv.clone().unwrap_or_default());
            }
            carry = if last || links[k].is_empty() { None } else { inv };
        }
        let dim = op.dim();
        Self { inertia, ny, dim, blocks, links, inverses: kept }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `(op - shift) x = b` in place. Requires `keep`.
    pub fn solve(&self, b: &mut [f64]) {
        let inv = self.inverses.as_ref().expect("factorization was not kept for solves");
        let ny = self.ny;
        let nb = self.blocks.len();
        let gather = |blk: &Block, v: &[f64]| -> Vec<f64> {
            let mut out = Vec::with_capacity(blk.lines.len() * ny);
            for &o in &blk.offs {
                out.extend_from_slice(&v[o..o + ny]);
            }
            out
        };
        let matvec = |m: &[f64], x: &[f64]| -> Vec<f64> {
            let n = x.len();
            (0..n).map(|i| m[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
        };
        // forward sweep: z_k = b_k - Bᵀ S_{k-1}⁻¹ z_{k-1}
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(nb);
        for k in 0..nb {
            let mut zk = gather(&self.blocks[k], b);
            if k > 0 && !zk.is_empty() && !z[k - 1].is_empty() {
                let y = matvec(&inv[k - 1], &z[k - 1]);
                for &(ia, ib, w) in &self.links[k - 1] {
                    for r in 0..ny {
                        zk[ib * ny + r] += w * y[ia * ny + r];
                    }
                }
            }
            z.push(zk);
        }
        // backward sweep: x_k = S_k⁻¹ (z_k - B x_{k+1})
        let mut x: Vec<Vec<f64>> = vec![Vec::new(); nb];
        for k in (0..nb).rev() {
            if z[k].is_empty() {
                continue;
            }
            let mut rhs = z[k].clone();
            if k + 1 < nb && !x[k + 1].is_empty() {
                for &(ia, ib, w) in &self.links[k] {
                    for r in 0..ny {
                        rhs[ia * ny + r] += w * x[k + 1][ib * ny + r];
                    }
                }
            }
            x[k] = matvec(&inv[k], &rhs);
        }
        for (blk, xk) in self.blocks.iter().zip(&x) {
            for (il, &o) in blk.offs.iter().enumerate() {
                b[o..o + ny].copy_from_slice(&xk[il * ny..(il + 1) * ny]);
            }
        }
    }
}
