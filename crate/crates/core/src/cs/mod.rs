//! Line recovery from a sub-band of the beamformed spectrum.
//!
//! Dividing the beamformed coefficients by the pulse spectrum leaves
//! `c_k / h_k = Σ_l b_l e^{−i2πk q_l / N}`, the DFT of a sparse spike
//! train seen on the measured bins μ. [`omp`] recovers the spikes
//! directly; [`analysis`] instead looks for the full-band coefficients
//! whose inverse transform has the smallest ℓ1 norm.

use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::freq_bf::{synthesize_line, Band, BeamSpectrum};
use crate::pulse::SampledPulse;
use crate::time_bf::BeamformedLine;

pub mod analysis;
pub mod omp;

pub use analysis::{recover_analysis_l1, AdmmParams, AnalysisSolution};
pub use omp::{recover_omp, OmpParams, SparseSolution};

/// Bins whose pulse magnitude is below this fraction of the peak are not
/// usable as measurements.
pub const PULSE_FLOOR: f64 = 1e-6;

/// Normalized sub-band measurement `y_k = c_k / h_k`, `k ∈ μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialMeasurement {
    pub mu: Vec<usize>,
    pub values: Vec<Complex64>,
    pub pulse: Vec<Complex64>,
    pub samples: usize,
}

impl PartialMeasurement {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Applies the sensing operator to a spike train: rows μ of the
    /// N-point DFT.
    pub fn apply(&self, support: &[usize], amplitudes: &[Complex64]) -> Vec<Complex64> {
        self.mu
            .iter()
            .map(|&k| {
                support
                    .iter()
                    .zip(amplitudes)
                    .map(|(&q, &b)| b * atom(k, q, self.samples))
                    .sum()
            })
            .collect()
    }
}

/// `e^{−i2πkq/N}` with the product reduced mod N first.
pub(crate) fn atom(k: usize, q: usize, n: usize) -> Complex64 {
    let r = ((k as u128 * q as u128) % n as u128) as f64;
    Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * r / n as f64)
}

pub fn build_measurement(spec: &BeamSpectrum, pulse: &SampledPulse, mu: &[usize]) -> Result<PartialMeasurement> {
    if pulse.len() != spec.samples {
        return Err(Error::Dimension(format!(
            "pulse has N={}, spectrum N={}",
            pulse.len(),
            spec.samples
        )));
    }
    let floor = PULSE_FLOOR * pulse.max_magnitude();
    let mut values = Vec::with_capacity(mu.len());
    let mut h = Vec::with_capacity(mu.len());
    for &k in mu {
        let c = spec
            .get(k)
            .ok_or_else(|| Error::config("mu", format!("bin {k} is not in the beamformed band")))?;
        let hk = pulse.spectrum[k];
        if hk.norm() < floor {
            return Err(Error::config(
                "mu",
                format!("bin {k}: pulse magnitude {:.3e} is below the usable floor", hk.norm()),
            ));
        }
        values.push(c / hk);
        h.push(hk);
    }
    Ok(PartialMeasurement {
        mu: mu.to_vec(),
        values,
        pulse: h,
        samples: spec.samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuStrategy {
    /// Contiguous run centered on the pulse's spectral peak.
    Central,
    /// Evenly spaced over the band.
    Uniform,
}

impl FromStr for MuStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "central" => Ok(MuStrategy::Central),
            "uniform" => Ok(MuStrategy::Uniform),
            other => Err(Error::config("mu", format!("unknown strategy `{other}`"))),
        }
    }
}

/// Picks `count` measurement bins inside the band. A central run starts
/// at `peak − ⌊(count − 1)/2⌋` and is shifted back inside the band when
/// it would cross an edge.
pub fn choose_mu(band: &Band, peak: usize, count: usize, strategy: MuStrategy) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::config("m", "at least one measurement is required"));
    }
    if count > band.len() {
        return Err(Error::config(
            "m",
            format!("{count} measurements requested but the band has {} bins", band.len()),
        ));
    }
    if !band.contains(peak) {
        return Err(Error::config("mu", format!("peak bin {peak} is outside the band")));
    }
    Ok(match strategy {
        MuStrategy::Central => {
            let start = (peak - ((count - 1) / 2).min(peak))
                .max(band.lo)
                .min(band.hi + 1 - count);
            (start..start + count).collect()
        }
        MuStrategy::Uniform if count == 1 => vec![peak],
        MuStrategy::Uniform => (0..count)
            .map(|i| band.lo + ((i * (band.len() - 1)) as f64 / (count - 1) as f64).round() as usize)
            .collect(),
    })
}

/// Line for a spike train: `Σ_l b_l h[n − q_l]`, band-limited to `band`.
pub fn sparse_line(
    support: &[usize],
    amplitudes: &[Complex64],
    pulse: &SampledPulse,
    band: &Band,
    theta: f64,
    sample_rate: f64,
) -> Result<BeamformedLine> {
    let n = pulse.len();
    let bins = band.indices();
    let coeffs = bins
        .iter()
        .map(|&k| {
            let s: Complex64 = support.iter().zip(amplitudes).map(|(&q, &b)| b * atom(k, q, n)).sum();
            s * pulse.spectrum[k]
        })
        .collect();
    synthesize_line(&BeamSpectrum {
        bins,
        coeffs,
        samples: n,
        theta,
        sample_rate,
    })
}

/// Line for normalized full-band coefficients `c_k / h_k` on `band`.
pub fn normalized_line(
    normalized: &[Complex64],
    pulse: &SampledPulse,
    band: &Band,
    theta: f64,
    sample_rate: f64,
) -> Result<BeamformedLine> {
    let bins = band.indices();
    if normalized.len() != bins.len() {
        return Err(Error::Dimension("coefficient count does not match the band".into()));
    }
    let coeffs = bins.iter().zip(normalized).map(|(&k, &c)| c * pulse.spectrum[k]).collect();
    synthesize_line(&BeamSpectrum {
        bins,
        coeffs,
        samples: pulse.len(),
        theta,
        sample_rate,
    })
}

/// Constraint radius matching white noise of standard deviation `sigma`
/// per real and imaginary part on `count` measurements.
pub fn noise_epsilon(sigma: f64, count: usize) -> f64 {
    sigma * (2.0 * count as f64).sqrt()
}

/// Constraint radius for white channel noise of standard deviation
/// `sigma` per sample. Delay-and-sum over `elements` channels leaves
/// roughly `sigma / √M` of white noise on the line, whose DFT coefficients
/// carry `N σ² / M` variance; dividing by `h_k` scales each bin.
pub fn channel_noise_epsilon(sigma: f64, elements: usize, meas: &PartialMeasurement) -> f64 {
    let line_var = sigma * sigma / elements.max(1) as f64 * meas.samples as f64;
    meas.pulse.iter().map(|h| line_var / h.norm_sqr()).sum::<f64>().sqrt()
}
