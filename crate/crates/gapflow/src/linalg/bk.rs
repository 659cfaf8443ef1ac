//! Dense symmetric indefinite factorization with Bunch–Kaufman pivoting.
//!
//! `P A Pᵀ = L D Lᵀ` with `L` unit lower triangular and `D` block diagonal
//! with 1×1 and 2×2 blocks. Only the lower triangle of the input is read.

/// Growth-balancing constant of the partial pivoting rule.
const ALPHA: f64 = 0.640_388_203_202_208_4; // (1 + √17) / 8

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pivot {
    One(f64),
    /// `[[a, b], [b, c]]`
    Two(f64, f64, f64),
}

/// Sign counts of a factorization.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Inertia {
    pub neg: usize,
    pub zero: usize,
    pub pos: usize,
    /// smallest |eigenvalue| over the pivot blocks
    pub min_pivot: f64,
    pub two_by_two: usize,
}

impl Inertia {
    pub fn empty() -> Self {
        Self { min_pivot: f64::INFINITY, ..Default::default() }
    }

    pub fn add(&mut self, o: &Inertia) {
        self.neg += o.neg;
        self.zero += o.zero;
        self.pos += o.pos;
        self.two_by_two += o.two_by_two;
        self.min_pivot = self.min_pivot.min(o.min_pivot);
    }
}

#[derive(Clone, Debug)]
pub struct BkFactor {
    n: usize,
    /// row-major; strictly lower part holds L
    a: Vec<f64>,
    piv: Vec<(usize, Pivot)>,
    /// position i of the permuted matrix holds original index perm[i]
    perm: Vec<usize>,
}

fn eig2(a: f64, b: f64, c: f64) -> (f64, f64) {
    let m = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (m - r, m + r)
}

/// Swaps indices p < q of the symmetric matrix held in the lower triangle,
/// together with the already computed rows of L (columns `< k`).
fn swap_sym(a: &mut [f64], n: usize, p: usize, q: usize) {
    debug_assert!(p < q);
    for j in 0..p {
        a.swap(p * n + j, q * n + j);
    }
    a.swap(p * n + p, q * n + q);
    for j in p + 1..q {
        a.swap(j * n + p, q * n + j);
    }
    for i in q + 1..n {
        a.swap(i * n + p, i * n + q);
    }
}

impl BkFactor {
    /// Factors the symmetric matrix `a` (row-major, n×n). Exactly zero
    /// pivots are recorded rather than rejected; the inertia reports them.
    pub fn new(mut a: Vec<f64>, n: usize) -> Self {
        assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut piv = Vec::with_capacity(n);
        let mut w1 = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        let mut k = 0;
        while k < n {
            let absakk = a[k * n + k].abs();
            let (mut imax, mut colmax) = (k, 0.0f64);
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > colmax {
                    colmax = v;
                    imax = i;
                }
            }
            let (kstep, kp) = if absakk.max(colmax) == 0.0 {
                (1, k)
            } else if absakk >= ALPHA * colmax {
                (1, k)
            } else {
                let mut rowmax = 0.0f64;
                for j in k..imax {
                    rowmax = rowmax.max(a[imax * n + j].abs());
                }
                for i in imax + 1..n {
                    rowmax = rowmax.max(a[i * n + imax].abs());
                }
                if absakk * rowmax >= ALPHA * colmax * colmax {
                    (1, k)
                } else if a[imax * n + imax].abs() >= ALPHA * rowmax {
                    (1, imax)
                } else {
                    (2, imax)
                }
            };
            let kk = k + kstep - 1;
            if kp != kk {
                swap_sym(&mut a, n, kk, kp);
                perm.swap(kk, kp);
            }
            if kstep == 1 {
                let d = a[k * n + k];
                piv.push((k, Pivot::One(d)));
                if d != 0.0 {
                    for i in k + 1..n {
                        w1[i] = a[i * n + k];
                    }
                    for i in k + 1..n {
                        let f = w1[i] / d;
                        if f != 0.0 {
                            let row = &mut a[i * n..i * n + i + 1];
                            for j in k + 1..=i {
                                row[j] -= f * w1[j];
                            }
                        }
                        a[i * n + k] = f;
                    }
                }
            } else {
                let (d11, d21, d22) = (a[k * n + k], a[(k + 1) * n + k], a[(k + 1) * n + k + 1]);
                piv.push((k, Pivot::Two(d11, d21, d22)));
                let det = d11 * d22 - d21 * d21;
                for i in k + 2..n {
                    w1[i] = a[i * n + k];
                    w2[i] = a[i * n + k + 1];
                }
                for i in k + 2..n {
                    // (l1, l2) = (w1, w2) D⁻¹
                    let l1 = (w1[i] * d22 - w2[i] * d21) / det;
                    let l2 = (w2[i] * d11 - w1[i] * d21) / det;
                    let row = &mut a[i * n..i * n + i + 1];
                    for j in k + 2..=i {
                        row[j] -= l1 * w1[j] + l2 * w2[j];
                    }
                    a[i * n + k] = l1;
                    a[i * n + k + 1] = l2;
                }
                a[(k + 1) * n + k] = 0.0;
            }
            k += kstep;
        }
        Self { n, a, piv, perm }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn pivots(&self) -> &[(usize, Pivot)] {
        &self.piv
    }

    /// Inertia; pivots with |value| ≤ `zero_tol` count as zero.
    pub fn inertia(&self, zero_tol: f64) -> Inertia {
        let mut out = Inertia::empty();
        let mut tally = |v: f64| {
            out.min_pivot = out.min_pivot.min(v.abs());
            if v.abs() <= zero_tol {
                out.zero += 1;
            } else if v < 0.0 {
                out.neg += 1;
            } else {
                out.pos += 1;
            }
        };
        for &(_, p) in &self.piv {
            match p {
                Pivot::One(d) => tally(d),
                Pivot::Two(a, b, c) => {
                    let (l1, l2) = eig2(a, b, c);
                    tally(l1);
                    tally(l2);
                }
            }
        }
        out.two_by_two = self.piv.iter().filter(|p| matches!(p.1, Pivot::Two(..))).count();
        out
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    fn apply_dinv(&self, z: &mut [f64]) {
        for &(k, p) in &self.piv {
            match p {
                Pivot::One(d) => z[k] /= d,
                Pivot::Two(a, b, c) => {
                    let det = a * c - b * b;
                    let (x, y) = (z[k], z[k + 1]);
                    z[k] = (c * x - b * y) / det;
                    z[k + 1] = (a * y - b * x) / det;
                }
            }
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut z: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = z[i];
            for j in 0..i {
                s -= self.l(i, j) * z[j];
            }
            z[i] = s;
        }
        self.apply_dinv(&mut z);
        for i in (0..n).rev() {
            let mut s = z[i];
            for j in i + 1..n {
                s -= self.l(j, i) * z[j];
            }
            z[i] = s;
        }
        for (i, &p) in self.perm.iter().enumerate() {
            b[p] = z[i];
        }
    }

    /// Explicit inverse, row-major.
    pub fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        // X = L⁻¹, unit lower triangular, row-major
        let mut x = vec![0.0; n * n];
        for i in 0..n {
            x[i * n + i] = 1.0;
            for k in 0..i {
                let lik = self.l(i, k);
                if lik != 0.0 {
                    let (head, tail) = x.split_at_mut(i * n);
                    let rk = &head[k * n..k * n + k + 1];
                    let ri = &mut tail[..k + 1];
                    for j in 0..=k {
                        ri[j] -= lik * rk[j];
                    }
                }
            }
        }
        // Y = D⁻¹ X, row by row
        let mut y = x.clone();
        for &(k, p) in &self.piv {
            match p {
                Pivot::One(d) => {
                    for v in &mut y[k * n..(k + 1) * n] {
                        *v /= d;
                    }
                }
                Pivot::Two(a, b, c) => {
                    let det = a * c - b * b;
                    for j in 0..n {
                        let (u, v) = (x[k * n + j], x[(k + 1) * n + j]);
                        y[k * n + j] = (c * u - b * v) / det;
                        y[(k + 1) * n + j] = (a * v - b * u) / det;
                    }
                }
            }
        }
        // M = Xᵀ Y, accumulated row by row of X and Y
        let mut m = vec![0.0; n * n];
        for k in 0..n {
            let xr = &x[k * n..(k + 1) * n];
            let yr = &y[k * n..(k + 1) * n];
            let lim = (k + 2).min(n); // X and Y rows vanish beyond column k+1
            for a_ in 0..lim {
                let xa = xr[a_];
                if xa == 0.0 {
                    continue;
                }
                let mr = &mut m[a_ * n..a_ * n + lim];
                for (mv, yv) in mr.iter_mut().zip(&yr[..lim]) {
                    *mv += xa * yv;
                }
            }
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[self.perm[i] * n + self.perm[j]] = 0.5 * (m[i * n + j] + m[j * n + i]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        a
    }

    #[test]
    fn solve_and_inverse() {
        for seed in 0..10 {
            let n = 23;
            let a = random_sym(n, seed);
            let f = BkFactor::new(a.clone(), n);
            let inv = f.inverse();
            for i in 0..n {
                for j in 0..n {
                    let s: f64 = (0..n).map(|k| a[i * n + k] * inv[k * n + j]).sum();
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((s - e).abs() < 1e-9, "seed {seed} ({i},{j}) {s}");
                }
            }
            let b: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
            let mut x = b.clone();
            f.solve(&mut x);
            for i in 0..n {
                let s: f64 = (0..n).map(|k| a[i * n + k] * x[k]).sum();
                assert!((s - b[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn inertia_of_known_matrix() {
        // zero diagonal forces 2x2 pivots
        let a = vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -2.0];
        let f = BkFactor::new(a, 3);
        let i = f.inertia(0.0);
        assert_eq!((i.neg, i.zero, i.pos), (2, 0, 1));
        assert!(i.two_by_two >= 1);
    }
}
