//! Thin wrapper over `rustfft` with the conventions used throughout the
//! crate: forward transforms are unnormalized, `X[k] = Σ x[n] e^{-i2πkn/N}`,
//! and inverse transforms are unnormalized as well, so a round trip scales
//! by N.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans of one length, shareable across threads.
#[derive(Clone)]
pub struct Dft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft").field("len", &self.len).finish()
    }
}

impl Dft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// Unnormalized inverse: `x[n] = Σ X[k] e^{+i2πkn/N}`.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
    }

    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }
}

/// Direct O(N²) transform, kept as the reference the fast path is tested
/// against.
pub fn naive_dft(x: &[f64], bins: &[usize]) -> Vec<Complex64> {
    let n = x.len();
    bins.iter()
        .map(|&k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                // reduce the product first to keep the angle small
                let phase = -2.0 * std::f64::consts::PI * ((k * j) % n) as f64 / n as f64;
                acc += Complex64::from_polar(v, phase);
            }
            acc
        })
        .collect()
}
