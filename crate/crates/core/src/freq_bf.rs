//! Beamforming in the frequency domain: band selection, the per-channel
//! DFT restricted to the needed bins, the kernel sum and line synthesis.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::dft::Dft;
use crate::error::{Error, Result};
use crate::kernel::{KernelStats, QKernelTable};
use crate::phantom::ChannelFrame;
use crate::pulse::SampledPulse;
use crate::time_bf::BeamformedLine;

/// Minimum share of the one-sided pulse energy the band must hold.
pub const BAND_COVERAGE: f64 = 0.999;

/// Contiguous one-sided bin range `lo..=hi`; the conjugate bins are
/// implied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Band {
    pub lo: usize,
    pub hi: usize,
}

impl Band {
    pub fn len(&self) -> usize {
        self.hi - self.lo + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> Vec<usize> {
        (self.lo..=self.hi).collect()
    }

    pub fn contains(&self, k: usize) -> bool {
        k >= self.lo && k <= self.hi
    }
}

/// Grows the band from the spectral peak while `|h_k| ≥ threshold · max`,
/// then checks that it holds at least [`BAND_COVERAGE`] of the one-sided
/// energy.
pub fn band_select(pulse: &SampledPulse, threshold: f64) -> Result<Band> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("band_floor", format!("threshold {threshold} is not in (0, 1)")));
    }
    let n = pulse.len();
    let half = n / 2;
    let mag: Vec<f64> = pulse.spectrum[..=half].iter().map(|h| h.norm()).collect();
    let peak = pulse.peak_bin();
    let floor = threshold * mag[peak];
    if mag[peak] == 0.0 {
        return Err(Error::config("band_floor", "pulse spectrum is empty"));
    }
    let mut lo = peak;
    while lo > 0 && mag[lo - 1] >= floor {
        lo -= 1;
    }
    let mut hi = peak;
    while hi < half && mag[hi + 1] >= floor {
        hi += 1;
    }
    let total: f64 = mag.iter().map(|m| m * m).sum();
    let inside: f64 = mag[lo..=hi].iter().map(|m| m * m).sum();
    if inside < BAND_COVERAGE * total {
        return Err(Error::config(
            "band_floor",
            format!(
                "band {lo}..={hi} holds {:.4}% of the pulse energy, need {:.1}%",
                100.0 * inside / total,
                100.0 * BAND_COVERAGE
            ),
        ));
    }
    Ok(Band { lo, hi })
}

/// DFT coefficients of every element signal on a common bin set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpectra {
    pub bins: Vec<usize>,
    /// Row-major `elements × bins.len()`.
    pub values: Vec<Complex64>,
    pub elements: usize,
    pub samples: usize,
    pub theta: f64,
    pub sample_rate: f64,
}

impl ChannelSpectra {
    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.values[m * self.bins.len()..(m + 1) * self.bins.len()]
    }
}

/// Length-N DFT of every row of the frame, kept on `bins`. This stands in
/// for a front end that acquires only those coefficients.
pub fn channel_dft(frame: &ChannelFrame, bins: &[usize]) -> Result<ChannelSpectra> {
    if let Some(&b) = bins.iter().find(|&&b| b >= frame.len) {
        return Err(Error::config("bins", format!("bin {b} is outside 0..{}", frame.len)));
    }
    let dft = Dft::new(frame.len);
    let rows: Vec<Vec<Complex64>> = (0..frame.elements)
        .into_par_iter()
        .map(|m| {
            let full = dft.forward_real(frame.row(m));
            bins.iter().map(|&b| full[b]).collect()
        })
        .collect();
    Ok(ChannelSpectra {
        bins: bins.to_vec(),
        values: rows.concat(),
        elements: frame.elements,
        samples: frame.len,
        theta: frame.theta,
        sample_rate: frame.sample_rate,
    })
}

/// DFT coefficients `c_k` of a beamformed line on a set of one-sided bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSpectrum {
    pub bins: Vec<usize>,
    pub coeffs: Vec<Complex64>,
    pub samples: usize,
    pub theta: f64,
    pub sample_rate: f64,
}

impl BeamSpectrum {
    /// Spectrum of an existing line on the given bins.
    pub fn of_line(line: &BeamformedLine, bins: &[usize]) -> Self {
        let full = Dft::new(line.len()).forward_real(&line.samples);
        Self {
            bins: bins.to_vec(),
            coeffs: bins.iter().map(|&b| full[b]).collect(),
            samples: line.len(),
            theta: line.theta,
            sample_rate: line.sample_rate,
        }
    }

    pub fn get(&self, k: usize) -> Option<Complex64> {
        self.bins.binary_search(&k).ok().map(|i| self.coeffs[i])
    }
}

/// `c_k = 1/(M N) Σ_m Σ_j Q_{k,m}[j] φ_m[k − j]` for every bin of the table.
pub fn beamform_freq(spectra: &ChannelSpectra, table: &QKernelTable) -> Result<BeamSpectrum> {
    if spectra.elements != table.elements || spectra.samples != table.samples {
        return Err(Error::Dimension(format!(
            "spectra are {} elements x N={}, kernel table {} x N={}",
            spectra.elements, spectra.samples, table.elements, table.samples
        )));
    }
    let n = spectra.samples;
    let mut position = vec![usize::MAX; n];
    for (i, &b) in spectra.bins.iter().enumerate() {
        position[b] = i;
    }
    let missing: Vec<usize> = table.nu().into_iter().filter(|&b| position[b] == usize::MAX).collect();
    if !missing.is_empty() {
        return Err(Error::Coverage { missing });
    }
    let scale = 1.0 / (spectra.elements as f64 * n as f64);
    let coeffs = table
        .bins()
        .par_iter()
        .enumerate()
        .map(|(bi, &k)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..spectra.elements {
                let row = spectra.row(m);
                let e = table.entry(m, bi);
                for (j, q) in e.offsets().zip(&e.coeffs) {
                    let b = (k as i64 - j).rem_euclid(n as i64) as usize;
                    acc += q * row[position[b]];
                }
            }
            acc * scale
        })
        .collect();
    Ok(BeamSpectrum {
        bins: table.bins().to_vec(),
        coeffs,
        samples: n,
        theta: spectra.theta,
        sample_rate: spectra.sample_rate,
    })
}

/// Zero-pads the one-sided coefficients, mirrors them into the conjugate
/// half and inverts. Fails if the result is not real to within 1e-10 of
/// its norm.
pub fn synthesize_line(spec: &BeamSpectrum) -> Result<BeamformedLine> {
    let n = spec.samples;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (&k, &c) in spec.bins.iter().zip(&spec.coeffs) {
        if 2 * k > n {
            return Err(Error::config("bins", format!("bin {k} is not one-sided for N={n}")));
        }
        if k == 0 || 2 * k == n {
            buf[k] = Complex64::new(c.re, 0.0);
        } else {
            buf[k] = c;
            buf[n - k] = c.conj();
        }
    }
    Dft::new(n).inverse_in_place(&mut buf);
    let norm = buf.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let imag = buf.iter().map(|v| v.im * v.im).sum::<f64>().sqrt();
    if imag > 1e-10 * norm {
        return Err(Error::Numerical(format!(
            "synthesized line has imaginary part {:.3e} of its norm",
            imag / norm
        )));
    }
    Ok(BeamformedLine {
        samples: buf.iter().map(|v| v.re / n as f64).collect(),
        theta: spec.theta,
        sample_rate: spec.sample_rate,
    })
}

/// Budget report, one row per direction.
pub fn budget_csv(rows: &[(f64, KernelStats)]) -> String {
    let mut s = String::from("theta_rad,kappa,nu,ratio,N,reduction\n");
    for (theta, st) in rows {
        let _ = writeln!(
            s,
            "{theta:.6},{},{},{:.4},{},{:.3}",
            st.kappa, st.nu, st.ratio, st.samples, st.reduction
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{GridSpec, Setup};
    use crate::kernel::build_kernel_table;
    use crate::pulse::{sample_pulse, PulseModel};

    #[test]
    fn impulse_band_is_whole_half_spectrum() {
        let grid = GridSpec {
            duration: 1.0,
            samples: 64,
            sample_rate: 64.0,
        };
        let p = sample_pulse(&PulseModel::impulse(64.0), &grid);
        let band = band_select(&p, 0.5).unwrap();
        assert_eq!(band, Band { lo: 0, hi: 32 });
    }

    #[test]
    fn cardiac_band_size() {
        let setup = Setup::cardiac();
        let grid = setup.grid().unwrap();
        let p = sample_pulse(&PulseModel::from_config(&setup.imaging), &grid);
        let band = band_select(&p, setup.processing.band_threshold()).unwrap();
        assert!((320..=400).contains(&band.len()), "{band:?}");
        assert!(band.len() as f64 / grid.samples as f64 <= 1.0 / 8.0);
    }

    #[test]
    fn band_threshold_too_high_fails_coverage() {
        let setup = Setup::cardiac();
        let grid = setup.grid().unwrap();
        let p = sample_pulse(&PulseModel::from_config(&setup.imaging), &grid);
        assert!(band_select(&p, 0.5).is_err());
    }

    #[test]
    fn dc_bin_of_constant_row() {
        let mut frame = ChannelFrame::zeros(1, 16, 0.0, 16.0);
        frame.samples.iter_mut().for_each(|v| *v = 0.75);
        let s = channel_dft(&frame, &[0]).unwrap();
        assert!((s.values[0] - Complex64::new(12.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn reference_only_array_passes_through() {
        let setup = Setup::parse("elements = 1\nreference_element = 0\npitch = 1 mm\ndepth = 2 cm\nline_start = 0 m\nline_taper = 0 s").unwrap();
        let grid = setup.grid().unwrap();
        let mut frame = ChannelFrame::zeros(1, grid.samples, 0.0, grid.sample_rate);
        for (n, v) in frame.samples.iter_mut().enumerate() {
            *v = ((n * 37) % 11) as f64 - 5.0;
        }
        let bins: Vec<usize> = (40..60).collect();
        let table = build_kernel_table(&setup, 0.0, &bins, 1e-3).unwrap();
        let spectra = channel_dft(&frame, &table.nu()).unwrap();
        let c = beamform_freq(&spectra, &table).unwrap();
        let direct = channel_dft(&frame, &bins).unwrap();
        for (a, b) in c.coeffs.iter().zip(&direct.values) {
            assert!((a - b).norm() < 1e-9 * b.norm().max(1.0));
        }
    }

    #[test]
    fn coverage_gap_lists_missing_bins() {
        let setup = Setup::parse("elements = 4\ndepth = 2 cm").unwrap();
        let grid = setup.grid().unwrap();
        let table = build_kernel_table(&setup, 0.1, &[50, 51], 1e-3).unwrap();
        let frame = ChannelFrame::zeros(4, grid.samples, 0.1, grid.sample_rate);
        let spectra = channel_dft(&frame, &[50]).unwrap();
        match beamform_freq(&spectra, &table) {
            Err(Error::Coverage { missing }) => {
                assert!(!missing.is_empty() && !missing.contains(&50));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn synthesizes_in_band_cosine() {
        let n = 128;
        let k0 = 9;
        let x: Vec<f64> = (0..n)
            .map(|i| 0.8 * (2.0 * std::f64::consts::PI * k0 as f64 * i as f64 / n as f64 + 0.4).cos())
            .collect();
        let line = BeamformedLine {
            samples: x.clone(),
            theta: 0.0,
            sample_rate: 1.0,
        };
        let spec = BeamSpectrum::of_line(&line, &[7, 8, 9, 10]);
        let back = synthesize_line(&spec).unwrap();
        for (a, b) in back.samples.iter().zip(&x) {
            assert!((a - b).abs() < 1e-9);
        }
        let mut padded = spec.clone();
        padded.bins = vec![3, 7, 8, 9, 10, 20];
        padded.coeffs = vec![Complex64::new(0.0, 0.0)]
            .into_iter()
            .chain(spec.coeffs.iter().cloned())
            .chain([Complex64::new(0.0, 0.0)])
            .collect();
        assert_eq!(synthesize_line(&padded).unwrap().samples, back.samples);
    }
}
