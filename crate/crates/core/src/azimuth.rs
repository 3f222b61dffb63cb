//! Real circulant operators on a uniform azimuth ring, built from a
//! per-Fourier-mode multiplier.
//!
//! A multiplier `M(m)` with `M(-m) = conj(M(m))` defines a real operator on
//! node values. The Nyquist mode of an even ring carries the multiplier's
//! value at `m = 0`, i.e. it is treated as a mode with zero angular
//! derivative. That keeps rotations orthogonal and keeps every multiplier
//! derived from the azimuthal generator consistent with its spectral
//! derivative.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

#[derive(Debug, Clone)]
pub struct Circulant {
    coeffs: Vec<f64>,
}

impl Circulant {
    pub fn from_multiplier<M: Fn(f64) -> Complex64>(n: usize, mult: M) -> Self {
        let top = if n.is_multiple_of(2) { n / 2 - 1 } else { (n - 1) / 2 };
        let m0 = mult(0.0).re;
        let modes: Vec<Complex64> = (1..=top).map(|m| mult(m as f64)).collect();
        let inv_n = 1.0 / n as f64;
        let coeffs = (0..n)
            .map(|d| {
                let phi = 2.0 * PI * d as f64 / n as f64;
                let mut s = m0;
                for (idx, mm) in modes.iter().enumerate() {
                    let m = (idx + 1) as f64;
                    let ph = Complex64::from_polar(1.0, m * phi);
                    s += 2.0 * (mm * ph).re;
                }
                if n.is_multiple_of(2) {
                    let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
                    s += m0 * sign;
                }
                s * inv_n
            })
            .collect();
        Circulant { coeffs }
    }

    /// Rotation `f(psi) -> f(psi + angle)`.
    pub fn rotation(n: usize, angle: f64) -> Self {
        Self::from_multiplier(n, |m| Complex64::from_polar(1.0, m * angle))
    }

    /// Spectral azimuthal derivative.
    pub fn derivative(n: usize) -> Self {
        Self::from_multiplier(n, |m| Complex64::new(0.0, m))
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        let n = self.coeffs.len();
        debug_assert_eq!(input.len(), n);
        debug_assert_eq!(out.len(), n);
        for (k, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (l, v) in input.iter().enumerate() {
                s += self.coeffs[(k + n - l) % n] * v;
            }
            *o = s;
        }
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        self.apply_into(input, &mut out);
        out
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.coeffs.len();
        DMatrix::from_fn(n, n, |k, l| self.coeffs[(k + n - l) % n])
    }
}

/// `(e^{i x} - 1) / (i x)`, i.e. the mean of `e^{i x t}` over `t in [0, 1]`.
pub fn phase_mean(x: f64) -> Complex64 {
    if x.abs() < 0.5 {
        // sum_k (i x)^k / (k+1)!
        let ix = Complex64::new(0.0, x);
        let mut term = Complex64::new(1.0, 0.0);
        let mut s = term;
        for k in 1..30 {
            term = term * ix / (k as f64 + 1.0);
            s += term;
            if term.norm() < 1e-18 {
                break;
            }
        }
        s
    } else {
        (Complex64::from_polar(1.0, x) - 1.0) / Complex64::new(0.0, x)
    }
}

/// `int_0^1 (1 - t) e^{i x t} dt`.
pub fn phase_ramp_mean(x: f64) -> Complex64 {
    if x.abs() < 0.5 {
        // sum_k (i x)^k / (k+2)!
        let ix = Complex64::new(0.0, x);
        let mut term = Complex64::new(0.5, 0.0);
        let mut s = term;
        for k in 1..30 {
            term = term * ix / (k as f64 + 2.0);
            s += term;
            if term.norm() < 1e-18 {
                break;
            }
        }
        s
    } else {
        (phase_mean(x) - 1.0) / Complex64::new(0.0, x)
    }
}
