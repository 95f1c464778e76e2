//! Tridiagonal kernels: Thomas solves (plain and cyclic) and the lowest
//! eigenpairs of a symmetric tridiagonal matrix by Sturm bisection with
//! inverse iteration.

use std::ops::{Add, Div, Mul, Sub};

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn zero() -> Self;
    fn one() -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
}

impl Scalar for num_complex::Complex64 {
    fn zero() -> Self {
        num_complex::Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        num_complex::Complex64::new(1.0, 0.0)
    }
}

/// Solves `A x = d` for tridiagonal `A` with sub-diagonal `a` (`a[0]`
/// unused), diagonal `b` and super-diagonal `c` (`c[n-1]` unused).
pub fn thomas<T: Scalar>(a: &[T], b: &[T], c: &[T], d: &[T]) -> Vec<T> {
    let n = b.len();
    let mut cp = vec![T::zero(); n];
    let mut dp = vec![T::zero(); n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        x[i] = x[i] - cp[i] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal solve: `a[0]` couples row 0 to column `n-1` and
/// `c[n-1]` couples row `n-1` to column 0. Sherman–Morrison on top of
/// [`thomas`]; needs `n ≥ 3`.
pub fn thomas_cyclic<T: Scalar>(a: &[T], b: &[T], c: &[T], d: &[T]) -> Vec<T> {
    let n = b.len();
    let alpha = c[n - 1];
    let beta = a[0];
    let gamma = T::zero() - b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - alpha * beta / gamma;
    let x = thomas(a, &bb, c, d);
    let mut u = vec![T::zero(); n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(a, &bb, c, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (T::one() + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(&xi, &zi)| xi - fact * zi).collect()
}

/// Number of eigenvalues of the symmetric tridiagonal `(diag, off)` below
/// `lambda`.
fn sturm_count(diag: &[f64], off: &[f64], lambda: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - lambda;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let denom = if q == 0.0 { f64::EPSILON * (off[i - 1].abs() + 1.0) } else { q };
        q = diag[i] - lambda - off[i - 1] * off[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Lowest `k` eigenpairs, eigenvalues ascending, vectors of unit 2-norm.
/// `off[i]` couples rows `i` and `i+1`.
pub fn lowest_eigenpairs(diag: &[f64], off: &[f64], k: usize) -> Vec<(f64, Vec<f64>)> {
    let n = diag.len();
    assert!(k <= n && off.len() + 1 == n);
    // Gershgorin bounds
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(1.0);
    let mut out: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    for idx in 0..k {
        let (mut a, mut b) = (lo, hi);
        while b - a > 4.0 * f64::EPSILON * scale {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if sturm_count(diag, off, mid) > idx {
                b = mid;
            } else {
                a = mid;
            }
        }
        let lambda = 0.5 * (a + b);
        let vec = inverse_iteration(diag, off, lambda, scale, &out);
        out.push((lambda, vec));
    }
    out
}

fn inverse_iteration(diag: &[f64], off: &[f64], lambda: f64, scale: f64, previous: &[(f64, Vec<f64>)]) -> Vec<f64> {
    let n = diag.len();
    let shift = lambda - 1e3 * f64::EPSILON * scale;
    let sub: Vec<f64> = std::iter::once(0.0).chain(off.iter().copied()).collect();
    let sup: Vec<f64> = off.iter().copied().chain(std::iter::once(0.0)).collect();
    let d: Vec<f64> = diag.iter().map(|v| v - shift).collect();
    // deterministic start with components in every eigendirection
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919 % 101) as f64 / 101.0)).collect();
    for _ in 0..4 {
        x = thomas(&sub, &d, &sup, &x);
        for (_, p) in previous {
            let dot: f64 = x.iter().zip(p).map(|(a, b)| a * b).sum();
            x.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn matvec(a: &[f64], b: &[f64], c: &[f64], x: &[f64], cyclic: bool) -> Vec<f64> {
        let n = b.len();
        (0..n)
            .map(|i| {
                let mut s = b[i] * x[i];
                if i > 0 {
                    s += a[i] * x[i - 1];
                } else if cyclic {
                    s += a[0] * x[n - 1];
                }
                if i + 1 < n {
                    s += c[i] * x[i + 1];
                } else if cyclic {
                    s += c[n - 1] * x[0];
                }
                s
            })
            .collect()
    }

    #[test]
    fn thomas_solves_diagonally_dominant_systems() {
        let n = 9;
        let a: Vec<f64> = (0..n).map(|i| -1.0 - 0.1 * i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 4.0 + i as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| 0.5 * i as f64 - 1.0).collect();
        let x0: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        for cyclic in [false, true] {
            let d = matvec(&a, &b, &c, &x0, cyclic);
            let x = if cyclic {
                thomas_cyclic(&a, &b, &c, &d)
            } else {
                thomas(&a, &b, &c, &d)
            };
            for (u, v) in x.iter().zip(&x0) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn complex_thomas_matches_real() {
        let a = vec![Complex64::new(0.0, 0.0), Complex64::new(-1.0, 0.2), Complex64::new(-1.0, 0.2)];
        let b = vec![Complex64::new(3.0, 1.0); 3];
        let c = vec![Complex64::new(-1.0, -0.2), Complex64::new(-1.0, -0.2), Complex64::new(0.0, 0.0)];
        let d = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(2.0, -1.0)];
        let x = thomas(&a, &b, &c, &d);
        let r0 = b[0] * x[0] + c[0] * x[1] - d[0];
        let r1 = a[1] * x[0] + b[1] * x[1] + c[1] * x[2] - d[1];
        let r2 = a[2] * x[1] + b[2] * x[2] - d[2];
        assert!(r0.norm() + r1.norm() + r2.norm() < 1e-13);
    }

    #[test]
    fn discrete_laplacian_spectrum() {
        // eigenvalues of tridiag(-1, 2, -1) are 2 − 2cos(kπ/(n+1))
        let n = 50;
        let diag = vec![2.0; n];
        let off = vec![-1.0; n - 1];
        let pairs = lowest_eigenpairs(&diag, &off, 6);
        for (k, (lambda, v)) in pairs.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((lambda - exact).abs() < 1e-13);
            let av = matvec(&[&[0.0][..], &off[..]].concat(), &diag, &[&off[..], &[0.0][..]].concat(), v, false);
            let res: f64 = av.iter().zip(v).map(|(a, b)| (a - lambda * b).abs()).fold(0.0, f64::max);
            assert!(res < 1e-12);
        }
    }
}
