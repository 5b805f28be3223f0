//! Delay-and-sum beamforming in the time domain. This is the reference
//! the frequency-domain path is measured against.

use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::config::{LineWindow, Setup};
use crate::error::{Error, Result};
use crate::phantom::{ChannelFrame, Provenance};

/// Time at which element `m` (one-way offset `gamma = δ_m / c`) must be
/// read so that the echo from beam time `t` lines up with the reference
/// element: `½(t + √(t² − 4γt sinθ + 4γ²))`.
pub fn delay_map(t: f64, theta: f64, gamma: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    // same radicand, written as a sum of squares
    0.5 * (t + (t - 2.0 * gamma * s).hypot(2.0 * gamma * c))
}

/// Inverse of [`delay_map`] on its range: beam time `t` read at element
/// time `u`.
pub fn beam_time(u: f64, theta: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        return u;
    }
    (u * u - gamma * gamma) / (u - gamma * theta.sin())
}

/// One beamformed line sampled at the acquisition rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedLine {
    pub samples: Vec<f64>,
    pub theta: f64,
    pub sample_rate: f64,
}

impl BeamformedLine {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Lines share the channel frame file format as a single-row frame.
    pub fn to_frame(&self) -> ChannelFrame {
        ChannelFrame {
            samples: self.samples.clone(),
            elements: 1,
            len: self.samples.len(),
            theta: self.theta,
            sample_rate: self.sample_rate,
            provenance: Provenance::Simulated,
        }
    }

    pub fn from_frame(frame: ChannelFrame) -> Result<Self> {
        if frame.elements != 1 {
            return Err(Error::Dimension(format!(
                "a line file holds one row, found {}",
                frame.elements
            )));
        }
        Ok(Self {
            samples: frame.samples,
            theta: frame.theta,
            sample_rate: frame.sample_rate,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_frame().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_frame(ChannelFrame::load(path)?)
    }

    pub fn scale_by_window(&mut self, window: &LineWindow) {
        if window.is_trivial() && window.end >= self.samples.len() as f64 / self.sample_rate {
            return;
        }
        for (n, v) in self.samples.iter_mut().enumerate() {
            *v *= window.weight(n as f64 / self.sample_rate);
        }
    }
}

/// Fractional-delay interpolation used to read element signals between
/// samples. Reads outside the recorded window return zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    Linear,
    /// Kaiser-windowed sinc, 32 taps, β = 8.
    #[default]
    Sinc,
}

const SINC_HALF: usize = 16;
const SINC_BETA: f64 = 8.0;
const SINC_PHASES: usize = 4096;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Tap weights for fractional offsets `p / SINC_PHASES`, `p = 0..=SINC_PHASES`,
/// laid out as `SINC_PHASES + 1` rows of `2 * SINC_HALF` taps for
/// positions `-15..=16` relative to the integer sample.
fn sinc_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let taps = 2 * SINC_HALF;
        let norm = bessel_i0(SINC_BETA);
        let mut table = Vec::with_capacity((SINC_PHASES + 1) * taps);
        for p in 0..=SINC_PHASES {
            let frac = p as f64 / SINC_PHASES as f64;
            for j in 0..taps {
                let d = (j as f64 - (SINC_HALF as f64 - 1.0)) - frac;
                let r = d / SINC_HALF as f64;
                let w = if r.abs() >= 1.0 {
                    0.0
                } else {
                    bessel_i0(SINC_BETA * (1.0 - r * r).sqrt()) / norm
                };
                let s = if d == 0.0 {
                    1.0
                } else {
                    let x = std::f64::consts::PI * d;
                    x.sin() / x
                };
                table.push(w * s);
            }
        }
        table
    })
}

fn read_at(row: &[f64], pos: f64, interp: Interpolation) -> f64 {
    let len = row.len() as isize;
    let base = pos.floor();
    let i = base as isize;
    let frac = pos - base;
    let at = |k: isize| if k >= 0 && k < len { row[k as usize] } else { 0.0 };
    if frac == 0.0 {
        return at(i);
    }
    match interp {
        Interpolation::Linear => (1.0 - frac) * at(i) + frac * at(i + 1),
        Interpolation::Sinc => {
            let taps = 2 * SINC_HALF;
            let table = sinc_table();
            let scaled = frac * SINC_PHASES as f64;
            let p = (scaled as usize).min(SINC_PHASES - 1);
            let w = scaled - p as f64;
            let lo = &table[p * taps..(p + 1) * taps];
            let hi = &table[(p + 1) * taps..(p + 2) * taps];
            let start = i - (SINC_HALF as isize - 1);
            let mut acc = 0.0;
            if start >= 0 && start + taps as isize <= len {
                let seg = &row[start as usize..start as usize + taps];
                for j in 0..taps {
                    acc += seg[j] * (lo[j] + w * (hi[j] - lo[j]));
                }
            } else {
                for j in 0..taps {
                    acc += at(start + j as isize) * (lo[j] + w * (hi[j] - lo[j]));
                }
            }
            acc
        }
    }
}

/// `Φ[n] = w(t_n) · (1/M) Σ_m φ_m(τ_m(t_n; θ))` with the setup's line
/// window `w` and the default interpolator.
pub fn beamform_time(frame: &ChannelFrame, setup: &Setup) -> Result<BeamformedLine> {
    beamform_time_with(frame, setup, Interpolation::default())
}

pub fn beamform_time_with(frame: &ChannelFrame, setup: &Setup, interp: Interpolation) -> Result<BeamformedLine> {
    frame.check_against(setup)?;
    let window = setup.line_window()?;
    let geom = &setup.geometry;
    let fs = frame.sample_rate;
    let theta = frame.theta;
    let gammas = geom.gammas();
    let m_count = geom.element_count() as f64;
    let samples: Vec<f64> = (0..frame.len)
        .into_par_iter()
        .map(|n| {
            let t = n as f64 / fs;
            let w = window.weight(t);
            if w == 0.0 {
                return 0.0;
            }
            let mut acc = 0.0;
            for (m, &g) in gammas.iter().enumerate() {
                let pos = if g == 0.0 { n as f64 } else { delay_map(t, theta, g) * fs };
                acc += read_at(frame.row(m), pos, interp);
            }
            w * acc / m_count
        })
        .collect();
    Ok(BeamformedLine {
        samples,
        theta,
        sample_rate: fs,
    })
}
