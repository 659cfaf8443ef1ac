//! Discrete tube Hamiltonians.
//!
//! Nodes are grouped into x-lines of `ny` nodes each, numbered line-major.
//! Every operator in the crate has the same sparsity: a cyclic tridiagonal
//! coupling inside each line, a scalar coupling between neighbouring lines,
//! and optionally a wrap-around coupling between the last and first line
//! (x-periodic layouts). Dirichlet cuts delete whole lines; symmetric
//! low-rank terms ride along on the side.

use faer::Mat;

use crate::error::{Error, Result};
use crate::grid::{PotentialField, TubeGrid};

/// `c · u uᵀ`, with `u` indexed by the full node layout (cut lines included).
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankTerm {
    pub u: Vec<f64>,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteOperator {
    xs: Vec<f64>,
    ny: usize,
    /// transverse weight of each line; the matrix entry is `-ty`
    ty: Vec<f64>,
    /// weight between line `i` and `i + 1`; the matrix entry is `-tx`
    tx: Vec<f64>,
    wrap: Option<f64>,
    diag: Vec<f64>,
    removed: Vec<bool>,
    /// ends of the section (Dirichlet positions, or one period for rings)
    bounds: (f64, f64),
    cuts: Vec<f64>,
    lowrank: Vec<LowRankTerm>,
}

/// Mass-lumped x-discretization on arbitrary line positions.
///
/// Returns the diagonal x-contribution of each line and the coupling
/// weights between neighbours for the symmetric form `W^{-1/2} K W^{-1/2}`,
/// `W_i` being half the sum of the adjacent spacings. On a uniform grid this
/// is the usual `(2, -1)/h²` stencil.
pub fn lumped_x(xs: &[f64], left: f64, right: f64) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let pos = |i: isize| -> f64 {
        if i < 0 {
            left
        } else if i as usize >= n {
            right
        } else {
            xs[i as usize]
        }
    };
    let mass: Vec<f64> = (0..n as isize).map(|i| 0.5 * (pos(i + 1) - pos(i - 1))).collect();
    let diag = (0..n as isize)
        .map(|i| {
            let hm = pos(i) - pos(i - 1);
            let hp = pos(i + 1) - pos(i);
            (1.0 / hm + 1.0 / hp) / mass[i as usize]
        })
        .collect();
    let tx = (0..n.saturating_sub(1))
        .map(|i| 1.0 / ((xs[i + 1] - xs[i]) * (mass[i] * mass[i + 1]).sqrt()))
        .collect();
    (diag, tx)
}

impl DiscreteOperator {
    /// Raw constructor. `x_diag` is the x-part of the diagonal per line and
    /// `pot` the node potential (length `xs.len() * ny`).
    #[allow(clippy::too_many_arguments)]
    pub fn from_lines(
        xs: Vec<f64>,
        ny: usize,
        hy: f64,
        x_diag: &[f64],
        tx: Vec<f64>,
        wrap: Option<f64>,
        pot: &[f64],
        bounds: (f64, f64),
    ) -> Result<Self> {
        let nl = xs.len();
        if nl == 0 || ny < 3 {
            return Err(Error::Grid(format!("need at least one line and ny >= 3, got {nl} x {ny}")));
        }
        if x_diag.len() != nl || tx.len() + 1 != nl || pot.len() != nl * ny {
            return Err(Error::Domain("line data lengths disagree".into()));
        }
        let tyv = 1.0 / (hy * hy);
        let mut diag = Vec::with_capacity(nl * ny);
        for (i, xd) in x_diag.iter().enumerate() {
            for j in 0..ny {
                diag.push(xd + 2.0 * tyv + pot[i * ny + j]);
            }
        }
        Ok(Self {
            xs,
            ny,
            ty: vec![tyv; nl],
            tx,
            wrap,
            diag,
            removed: vec![false; nl],
            bounds,
            cuts: Vec::new(),
            lowrank: Vec::new(),
        })
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lines(&self) -> usize {
        self.xs.len()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn lowrank(&self) -> &[LowRankTerm] {
        &self.lowrank
    }

    pub fn is_periodic_x(&self) -> bool {
        self.wrap.is_some()
    }

    pub(crate) fn ty(&self, line: usize) -> f64 {
        self.ty[line]
    }

    pub(crate) fn diag_full(&self) -> &[f64] {
        &self.diag
    }

    pub fn is_active(&self, line: usize) -> bool {
        !self.removed[line]
    }

    pub fn active_lines(&self) -> Vec<usize> {
        (0..self.lines()).filter(|&i| !self.removed[i]).collect()
    }

    /// Number of degrees of freedom (nodes on lines not removed by cuts).
    pub fn dim(&self) -> usize {
        self.removed.iter().filter(|r| !**r).count() * self.ny
    }

    /// Number of nodes in the full layout.
    pub fn full_len(&self) -> usize {
        self.lines() * self.ny
    }

    /// Offset of each line in the active vector, `None` for removed lines.
    pub fn offsets(&self) -> Vec<Option<usize>> {
        let mut off = 0;
        self.removed
            .iter()
            .map(|&r| {
                if r {
                    None
                } else {
                    off += self.ny;
                    Some(off - self.ny)
                }
            })
            .collect()
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        assert_eq!(full.len(), self.full_len());
        let mut out = Vec::with_capacity(self.dim());
        for (i, r) in self.removed.iter().enumerate() {
            if !r {
                out.extend_from_slice(&full[i * self.ny..(i + 1) * self.ny]);
            }
        }
        out
    }

    /// Embeds an active vector into the full layout, zero on cut lines.
    pub fn extend(&self, active: &[f64]) -> Vec<f64> {
        assert_eq!(active.len(), self.dim());
        let mut out = vec![0.0; self.full_len()];
        let mut k = 0;
        for (i, r) in self.removed.iter().enumerate() {
            if !r {
                out[i * self.ny..(i + 1) * self.ny].copy_from_slice(&active[k..k + self.ny]);
                k += self.ny;
            }
        }
        out
    }

    /// x coordinate of every active degree of freedom.
    pub fn dof_x(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (i, r) in self.removed.iter().enumerate() {
            if !r {
                out.extend(std::iter::repeat(self.xs[i]).take(self.ny));
            }
        }
        out
    }

    /// Active-space low-rank factors.
    pub fn lowrank_active(&self) -> Vec<(Vec<f64>, f64)> {
        self.lowrank.iter().map(|t| (self.restrict(&t.u), t.c)).collect()
    }

    /// Coupling between neighbouring active lines `a` and `a + 1`.
    pub(crate) fn coupling(&self, a: usize, b: usize) -> f64 {
        if self.removed[a] || self.removed[b] {
            return 0.0;
        }
        let n = self.lines();
        if b == a + 1 {
            self.tx[a]
        } else if a == b + 1 {
            self.tx[b]
        } else if n > 2 && ((a == 0 && b == n - 1) || (b == 0 && a == n - 1)) {
            self.wrap.unwrap_or(0.0)
        } else {
            0.0
        }
    }

    /// `y = A x` on the active space.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        assert_eq!(y.len(), n);
        let ny = self.ny;
        let offs = self.offsets();
        let nl = self.lines();
        for i in 0..nl {
            let Some(o) = offs[i] else { continue };
            let t = self.ty[i];
            for j in 0..ny {
                let jp = (j + 1) % ny;
                let jm = (j + ny - 1) % ny;
                y[o + j] = self.diag[i * ny + j] * x[o + j] - t * (x[o + jp] + x[o + jm]);
            }
            let mut neighbours = [(i.wrapping_sub(1), i > 0), (i + 1, i + 1 < nl)];
            if self.wrap.is_some() && nl > 2 {
                if i == 0 {
                    neighbours[0] = (nl - 1, true);
                }
                if i == nl - 1 {
                    neighbours[1] = (0, true);
                }
            }
            for (k, ok) in neighbours {
                if !ok {
                    continue;
                }
                if let Some(ok_) = offs[k] {
                    let c = self.coupling(i, k);
                    if c != 0.0 {
                        for j in 0..ny {
                            y[o + j] -= c * x[ok_ + j];
                        }
                    }
                }
            }
        }
        for (u, c) in self.lowrank_active() {
            let d: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() * c;
            for (yi, ui) in y.iter_mut().zip(&u) {
                *yi += d * ui;
            }
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }

    /// Dense matrix on the active space (low-rank terms included).
    pub fn to_dense(&self) -> Mat<f64> {
        let n = self.dim();
        let ny = self.ny;
        let offs = self.offsets();
        let mut m = Mat::<f64>::zeros(n, n);
        let nl = self.lines();
        for i in 0..nl {
            let Some(o) = offs[i] else { continue };
            for j in 0..ny {
                m[(o + j, o + j)] = self.diag[i * ny + j];
                let jp = (j + 1) % ny;
                m[(o + j, o + jp)] -= self.ty[i];
                m[(o + jp, o + j)] -= self.ty[i];
            }
            let next = if i + 1 < nl {
                Some(i + 1)
            } else if self.wrap.is_some() && nl > 2 {
                Some(0)
            } else {
                None
            };
            if let Some(k) = next {
                if let Some(ok) = offs[k] {
                    let c = self.coupling(i, k);
                    for j in 0..ny {
                        m[(o + j, ok + j)] -= c;
                        m[(ok + j, o + j)] -= c;
                    }
                }
            }
        }
        for (u, c) in self.lowrank_active() {
            for a in 0..n {
                if u[a] == 0.0 {
                    continue;
                }
                for b in 0..=a {
                    let v = c * u[a] * u[b];
                    m[(a, b)] += v;
                    if b != a {
                        m[(b, a)] += v;
                    }
                }
            }
        }
        m
    }

    /// Gershgorin bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        let ny = self.ny;
        let mut best = 0.0f64;
        for i in 0..self.lines() {
            if self.removed[i] {
                continue;
            }
            let mut off = 2.0 * self.ty[i].abs();
            if i > 0 {
                off += self.coupling(i, i - 1).abs();
            }
            if i + 1 < self.lines() {
                off += self.coupling(i, i + 1).abs();
            }
            if self.wrap.is_some() && (i == 0 || i + 1 == self.lines()) && self.lines() > 2 {
                off += self.wrap.unwrap().abs();
            }
            for j in 0..ny {
                best = best.max(self.diag[i * ny + j].abs() + off);
            }
        }
        let lr: f64 = self.lowrank_active().iter().map(|(u, c)| c.abs() * u.iter().map(|x| x * x).sum::<f64>()).sum();
        best + lr
    }

    /// Adds `s` to every diagonal entry.
    pub fn shifted(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.diag.iter_mut().for_each(|d| *d += s);
        out
    }

    /// Adds a node potential (full layout) to the diagonal.
    pub fn plus_potential(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.full_len() {
            return Err(Error::Domain(format!(
                "potential has {} entries, operator has {} nodes",
                v.len(),
                self.full_len()
            )));
        }
        let mut out = self.clone();
        out.diag.iter_mut().zip(v).for_each(|(d, p)| *d += p);
        Ok(out)
    }

    pub fn with_lowrank(&self, terms: Vec<LowRankTerm>) -> Result<Self> {
        for t in &terms {
            if t.u.len() != self.full_len() {
                return Err(Error::Domain(format!(
                    "low-rank vector has {} entries, operator has {} nodes",
                    t.u.len(),
                    self.full_len()
                )));
            }
            if !t.c.is_finite() {
                return Err(Error::Domain("low-rank coefficient must be finite".into()));
            }
        }
        let mut out = self.clone();
        out.lowrank.extend(terms);
        Ok(out)
    }

    pub fn without_lowrank(&self) -> Self {
        Self { lowrank: Vec::new(), ..self.clone() }
    }

    /// Line nearest to `x`.
    pub fn snap_line(&self, x: f64) -> Result<usize> {
        let (lo, hi) = self.bounds;
        if !(x > lo && x < hi) {
            return Err(Error::Domain(format!("cut position {x} outside ({lo}, {hi})")));
        }
        let k = match self.xs.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) if k == self.xs.len() => k - 1,
            Err(k) => {
                if (x - self.xs[k - 1]) <= (self.xs[k] - x) {
                    k - 1
                } else {
                    k
                }
            }
        };
        Ok(k)
    }

    /// Dirichlet condition on the line nearest to `x_c`: the nodes of that
    /// line are removed, which decouples the two sides.
    pub fn insert_dirichlet_cut(&self, x_c: f64) -> Result<Self> {
        let k = self.snap_line(x_c)?;
        Ok(self.cut_line(k))
    }

    pub fn cut_line(&self, k: usize) -> Self {
        let mut out = self.clone();
        if !out.removed[k] {
            out.removed[k] = true;
            out.cuts.push(self.xs[k]);
            out.cuts.sort_by(f64::total_cmp);
        }
        out
    }

    /// Largest |A_ij − A_ji| of the dense form.
    pub fn max_asymmetry(&self) -> f64 {
        let m = self.to_dense();
        let n = m.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Free operator on `grid`: 5-point stencil, Dirichlet in x, periodic in y.
pub fn build_laplacian(grid: &TubeGrid) -> DiscreteOperator {
    let nl = grid.lines();
    let h2 = 1.0 / (grid.hx * grid.hx);
    DiscreteOperator::from_lines(
        grid.xs(),
        grid.ny,
        grid.hy,
        &vec![2.0 * h2; nl],
        vec![h2; nl - 1],
        None,
        &vec![0.0; nl * grid.ny],
        (grid.x_min, grid.x_max),
    )
    .expect("a valid grid always assembles")
}

/// Laplacian plus potential, with cuts and low-rank terms attached.
pub fn assemble_hamiltonian(
    grid: &TubeGrid,
    v: &PotentialField,
    cuts: &[f64],
    lowrank: Vec<LowRankTerm>,
) -> Result<DiscreteOperator> {
    if v.grid != *grid {
        return Err(Error::Domain("potential lives on a different grid".into()));
    }
    let mut op = build_laplacian(grid).plus_potential(&v.values)?;
    for &c in cuts {
        op = op.insert_dirichlet_cut(c)?;
    }
    op.with_lowrank(lowrank)
}

/// Doubly periodic layout: `nxl` lines spaced `hx` starting at `x0`, with
/// a wrap coupling, each line a ring of `ny` nodes spaced `hy`.
pub fn periodic_layout(x0: f64, hx: f64, nxl: usize, ny: usize, hy: f64, pot: &[f64]) -> Result<DiscreteOperator> {
    if nxl < 3 {
        return Err(Error::Grid(format!("periodic layout needs at least 3 lines, got {nxl}")));
    }
    let h2 = 1.0 / (hx * hx);
    let xs: Vec<f64> = (0..nxl).map(|i| x0 + i as f64 * hx).collect();
    DiscreteOperator::from_lines(
        xs,
        ny,
        hy,
        &vec![2.0 * h2; nxl],
        vec![h2; nxl - 1],
        Some(h2),
        pot,
        (x0 - hx, x0 + nxl as f64 * hx),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_eigs(op: &DiscreteOperator) -> Vec<f64> {
        let mut e = op.to_dense().self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
        e.sort_by(f64::total_cmp);
        e
    }

    #[test]
    fn two_node_chain() {
        // one zero-mode line per x node: nx = 3, hx = 1 leaves two lines
        let g = TubeGrid::new(0.0, 3.0, 3, 4).unwrap();
        let op = build_laplacian(&g);
        let e = dense_eigs(&op);
        // x-part {1, 3} combined with transverse k = 0 mode (0)
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!((e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn apply_matches_dense() {
        let g = TubeGrid::with_spacing(-1.0, 1.0, 0.25, 5).unwrap();
        let v: Vec<f64> = (0..g.dim()).map(|k| (k as f64 * 0.37).sin()).collect();
        let op = build_laplacian(&g)
            .plus_potential(&v)
            .unwrap()
            .insert_dirichlet_cut(0.0)
            .unwrap()
            .with_lowrank(vec![LowRankTerm { u: (0..g.dim()).map(|k| (k as f64).cos()).collect(), c: 0.7 }])
            .unwrap();
        let x: Vec<f64> = (0..op.dim()).map(|k| ((k * 7) % 11) as f64 - 5.0).collect();
        let y = op.apply_vec(&x);
        let m = op.to_dense();
        for i in 0..op.dim() {
            let r: f64 = (0..op.dim()).map(|j| m[(i, j)] * x[j]).sum();
            assert!((r - y[i]).abs() < 1e-10);
        }
        assert_eq!(op.max_asymmetry(), 0.0);
    }

    #[test]
    fn lumped_uniform_is_standard() {
        let xs: Vec<f64> = (1..10).map(|i| i as f64 * 0.1).collect();
        let (d, t) = lumped_x(&xs, 0.0, 1.0);
        for v in d {
            assert!((v - 200.0).abs() < 1e-9);
        }
        for v in t {
            assert!((v - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn periodic_ring_spectrum() {
        let op = periodic_layout(0.0, 0.25, 8, 4, 0.25, &vec![0.0; 32]).unwrap();
        let e = dense_eigs(&op);
        let mut exact = Vec::new();
        for a in 0..8 {
            for b in 0..4 {
                let sx = (std::f64::consts::PI * a as f64 / 8.0).sin();
                let sy = (std::f64::consts::PI * b as f64 / 4.0).sin();
                exact.push(64.0 * sx * sx + 64.0 * sy * sy);
            }
        }
        exact.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}
