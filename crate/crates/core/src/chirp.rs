//! Chirp-z (Bluestein) evaluation of trigonometric sums on uniform grids.
//!
//! Computes `X_k = Σ_{n<M} a_n e^{i θ n k}` for `k < K` and arbitrary `θ` in
//! `O((M+K) log(M+K))`. The chirp phases `θ j²/2` are reduced modulo `2π`
//! with an error-free product so large indices keep full precision.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Low part of `2π` (the rounding error of `std::f64::consts::TAU`).
const TAU_LO: f64 = 2.449_293_598_294_706_4e-16;

/// `e^{i a b}` with the product formed exactly and reduced modulo `2π`.
pub fn cis_product(a: f64, b: f64) -> Complex64 {
    let hi = a * b;
    let lo = a.mul_add(b, -hi);
    let q = (hi / TAU).round();
    let r = (-q).mul_add(TAU, hi) - q * TAU_LO + lo;
    let (s, c) = r.sin_cos();
    Complex64::new(c, s)
}

/// Reusable plan for sums with fixed `(M, K, θ)`.
pub struct ChirpPlan {
    n_in: usize,
    n_out: usize,
    len: usize,
    /// `w_j = e^{i θ j²/2}` for `j < max(M, K)`.
    chirp: Vec<Complex64>,
    /// FFT of the conjugate chirp laid out for circular convolution.
    kernel: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ChirpPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChirpPlan")
            .field("n_in", &self.n_in)
            .field("n_out", &self.n_out)
            .field("len", &self.len)
            .finish()
    }
}

impl ChirpPlan {
    pub fn new(n_in: usize, n_out: usize, theta: f64) -> Self {
        assert!(n_in > 0 && n_out > 0);
        let len = (n_in + n_out - 1).next_power_of_two();
        let half = 0.5 * theta;
        let chirp: Vec<Complex64> = (0..n_in.max(n_out))
            .map(|j| {
                let jj = (j as f64) * (j as f64);
                cis_product(half, jj)
            })
            .collect();

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);

        let mut kernel = vec![Complex64::new(0.0, 0.0); len];
        for (j, w) in chirp.iter().enumerate().take(n_out) {
            kernel[j] = w.conj();
        }
        for j in 1..n_in {
            kernel[len - j] = chirp[j].conj();
        }
        forward.process(&mut kernel);

        Self {
            n_in,
            n_out,
            len,
            chirp,
            kernel,
            forward,
            inverse,
        }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// Evaluates the sum for coefficients `a` (length `M`).
    pub fn evaluate(&self, a: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(a.len(), self.n_in);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for (n, (&an, &w)) in a.iter().zip(&self.chirp).enumerate() {
            buf[n] = an * w;
        }
        self.forward.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel) {
            *b *= k;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        buf.truncate(self.n_out);
        for (b, w) in buf.iter_mut().zip(&self.chirp) {
            *b = *b * w * scale;
        }
        buf
    }
}
