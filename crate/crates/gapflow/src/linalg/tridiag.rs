//! Symmetric tridiagonal eigenproblem by implicit QL with Wilkinson shifts.

/// Eigen-decomposition of the tridiagonal matrix with diagonal `d` and
/// off-diagonal `e` (`e[i]` couples `i` and `i + 1`).
///
/// Returns ascending eigenvalues and the eigenvectors as columns of a
/// row-major `n × n` matrix (`z[i * n + k]` is component `i` of vector `k`).
pub fn eigh_tridiagonal(d: &[f64], e: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = d.len();
    assert!(e.len() + 1 == n || (n == 0 && e.is_empty()));
    let mut d = d.to_vec();
    let mut e: Vec<f64> = e.iter().copied().chain(std::iter::once(0.0)).take(n).collect();
    let mut z = vec![0.0; n * n];
    for i in 0..n {
        z[i * n + i] = 1.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 200, "tridiagonal QL failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let zk1 = z[k * n + i + 1];
                    let zk = z[k * n + i];
                    z[k * n + i + 1] = s * zk + c * zk1;
                    z[k * n + i] = c * zk - s * zk1;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let vals = idx.iter().map(|&k| d[k]).collect();
    let mut zs = vec![0.0; n * n];
    for (newk, &k) in idx.iter().enumerate() {
        for i in 0..n {
            zs[i * n + newk] = z[i * n + k];
        }
    }
    (vals, zs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_difference_matrix() {
        let n = 12;
        let (vals, z) = eigh_tridiagonal(&vec![2.0; n], &vec![-1.0; n - 1]);
        for (k, v) in vals.iter().enumerate() {
            let s = (std::f64::consts::PI * (k + 1) as f64 / (2.0 * (n + 1) as f64)).sin();
            assert!((v - 4.0 * s * s).abs() < 1e-13);
        }
        // columns orthonormal and satisfy T z = λ z
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| z[i * n + a] * z[i * n + b]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
            for i in 0..n {
                let mut tz = 2.0 * z[i * n + a];
                if i > 0 {
                    tz -= z[(i - 1) * n + a];
                }
                if i + 1 < n {
                    tz -= z[(i + 1) * n + a];
                }
                assert!((tz - vals[a] * z[i * n + a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decoupled_blocks() {
        let (vals, _) = eigh_tridiagonal(&[3.0, 1.0, 2.0], &[0.0, 0.0]);
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
    }
}
