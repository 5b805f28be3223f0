//! Transmitted pulse `h(t) = g(t) cos(2π f0 t)` and its sampled spectrum.

use num_complex::Complex64;

use crate::config::{GridSpec, ImagingConfig};
use crate::dft::Dft;

/// Attenuation of the Gaussian envelope's amplitude spectrum at the band
/// edges `±bandwidth/2`, as a linear factor (-40 dB).
pub const BAND_EDGE_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Envelope {
    /// `exp(-t² / 2σ²)` with `sigma` in seconds.
    Gaussian { sigma: f64 },
    /// Unit box on `[-width/2, width/2)`. With `width = 1/fs` this samples
    /// to a single unit impulse at `t = 0`.
    Rect { width: f64 },
}

impl Envelope {
    /// Gaussian whose amplitude spectrum falls to [`BAND_EDGE_LEVEL`] at
    /// `±bandwidth/2` around the carrier.
    pub fn gaussian_for_band(bandwidth: f64) -> Self {
        let sigma_f = (bandwidth / 2.0) / (2.0 * (1.0 / BAND_EDGE_LEVEL).ln()).sqrt();
        Envelope::Gaussian {
            sigma: 1.0 / (2.0 * std::f64::consts::PI * sigma_f),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Envelope::Gaussian { sigma } => (-(t * t) / (2.0 * sigma * sigma)).exp(),
            Envelope::Rect { width } => {
                if t >= -width / 2.0 && t < width / 2.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Half-width beyond which the envelope is treated as zero.
    pub fn half_support(&self) -> f64 {
        match *self {
            // exp(-x²/2) < 1e-13 beyond 7.7σ
            Envelope::Gaussian { sigma } => 7.7 * sigma,
            Envelope::Rect { width } => width / 2.0,
        }
    }

    /// Effective pulse duration used for separation guards: ±3.5σ for the
    /// Gaussian, the box width otherwise.
    pub fn duration(&self) -> f64 {
        match *self {
            Envelope::Gaussian { sigma } => 7.0 * sigma,
            Envelope::Rect { width } => width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseModel {
    pub carrier: f64,
    pub envelope: Envelope,
}

impl PulseModel {
    pub fn from_config(cfg: &ImagingConfig) -> Self {
        Self {
            carrier: cfg.carrier,
            envelope: Envelope::gaussian_for_band(cfg.bandwidth),
        }
    }

    /// Single-sample impulse at baseband, flat spectrum.
    pub fn impulse(sample_rate: f64) -> Self {
        Self {
            carrier: 0.0,
            envelope: Envelope::Rect { width: 1.0 / sample_rate },
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        if t.abs() > self.envelope.half_support() {
            return 0.0;
        }
        self.envelope.value(t) * (2.0 * std::f64::consts::PI * self.carrier * t).cos()
    }

    /// Pulse length in whole samples, rounded up.
    pub fn length_samples(&self, sample_rate: f64) -> usize {
        (self.envelope.duration() * sample_rate).ceil() as usize
    }
}

/// Pulse sampled on the acquisition grid. The samples are circular and
/// centered at index 0: index `n ≥ N/2` holds `h((n − N)/fs)`, so the
/// spectrum carries no linear phase and `h_k` is the transfer of a
/// replica at delay 0.
#[derive(Debug, Clone)]
pub struct SampledPulse {
    pub samples: Vec<f64>,
    pub spectrum: Vec<Complex64>,
}

impl SampledPulse {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak_bin(&self) -> usize {
        let half = self.len() / 2;
        let mut best = 0;
        for k in 1..=half {
            if self.spectrum[k].norm() > self.spectrum[best].norm() {
                best = k;
            }
        }
        best
    }

    pub fn max_magnitude(&self) -> f64 {
        self.spectrum.iter().map(|h| h.norm()).fold(0.0, f64::max)
    }
}

pub fn sample_pulse(pulse: &PulseModel, grid: &GridSpec) -> SampledPulse {
    let n = grid.samples;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let idx = if 2 * i < n { i as f64 } else { i as f64 - n as f64 };
            pulse.value(idx / grid.sample_rate)
        })
        .collect();
    let spectrum = Dft::new(n).forward_real(&samples);
    SampledPulse { samples, spectrum }
}

/// Fraction of the spectrum's energy at frequencies within `[lo, hi]` Hz,
/// counting both the positive bins and their negative mirrors.
pub fn band_energy_fraction(spectrum: &[Complex64], grid: &GridSpec, lo: f64, hi: f64) -> f64 {
    let n = spectrum.len();
    let mut inside = 0.0;
    let mut total = 0.0;
    for (k, h) in spectrum.iter().enumerate() {
        let e = h.norm_sqr();
        total += e;
        let kk = if k <= n / 2 { k } else { n - k };
        let f = grid.frequency(kk);
        if f >= lo && f <= hi {
            inside += e;
        }
    }
    if total == 0.0 {
        1.0
    } else {
        inside / total
    }
}
