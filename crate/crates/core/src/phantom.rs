//! Point-scatterer phantoms and the channel data they produce.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{GridSpec, Setup};
use crate::error::{Error, Result};
use crate::pulse::PulseModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Position {
    /// On the beam axis, given by the two-way delay seen at the reference
    /// element. Follows the beam direction it is simulated for.
    OnAxis { delay: f64 },
    /// Fixed point in the imaging plane, `x` along the array, `z` depth.
    Point { x: f64, z: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub position: Position,
    pub amplitude: f64,
}

impl Scatterer {
    pub fn on_axis(delay: f64, amplitude: f64) -> Self {
        Self {
            position: Position::OnAxis { delay },
            amplitude,
        }
    }

    /// Two-way delay at the reference element.
    pub fn reference_delay(&self, speed_of_sound: f64) -> f64 {
        match self.position {
            Position::OnAxis { delay } => delay,
            Position::Point { x, z } => 2.0 * x.hypot(z) / speed_of_sound,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Phantom {
    pub scatterers: Vec<Scatterer>,
}

impl Phantom {
    pub fn from_delays(delays: &[f64], amplitudes: &[f64]) -> Self {
        Self {
            scatterers: delays
                .iter()
                .zip(amplitudes)
                .map(|(&d, &a)| Scatterer::on_axis(d, a))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            scatterers: self
                .scatterers
                .iter()
                .map(|s| Scatterer {
                    amplitude: alpha * s.amplitude,
                    ..*s
                })
                .collect(),
        }
    }

    /// Superposition of two phantoms.
    pub fn union(&self, other: &Phantom) -> Self {
        let mut scatterers = self.scatterers.clone();
        scatterers.extend_from_slice(&other.scatterers);
        Self { scatterers }
    }
}

/// Diffuse scatterers with Poisson count and Gaussian amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeckleSpec {
    pub density_per_mm: f64,
    pub amplitude_std: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Speckle phantom on the beam axis: the expected count is `density` per
/// millimetre of imaged range, delays uniform over `(0, T)`, amplitudes
/// zero-mean normal with standard deviation `amp_std`.
pub fn make_speckle_phantom(
    seed: u64,
    density_per_mm: f64,
    amp_std: f64,
    grid: &GridSpec,
    speed_of_sound: f64,
) -> Result<Phantom> {
    if !(density_per_mm >= 0.0 && density_per_mm.is_finite()) {
        return Err(Error::config("density_per_mm", "must be non-negative"));
    }
    if !(amp_std >= 0.0 && amp_std.is_finite()) {
        return Err(Error::config("amplitude_std", "must be non-negative"));
    }
    if density_per_mm == 0.0 {
        return Ok(Phantom::default());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range_mm = speed_of_sound * grid.duration / 2.0 * 1e3;
    let count = Poisson::new(density_per_mm * range_mm)
        .map_err(|e| Error::config("density_per_mm", e.to_string()))?
        .sample(&mut rng) as usize;
    let amp = Normal::new(0.0, amp_std).map_err(|e| Error::config("amplitude_std", e.to_string()))?;
    let scatterers = (0..count)
        .map(|_| {
            let delay = loop {
                let d = rng.gen_range(0.0..grid.duration);
                if d > 0.0 {
                    break d;
                }
            };
            Scatterer::on_axis(delay, amp.sample(&mut rng))
        })
        .collect();
    Ok(Phantom { scatterers })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScattererEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delay_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lateral_m: Option<f64>,
    amplitude: f64,
}

/// Phantom description as stored in a `phantom.toml` file:
///
/// ```toml
/// [[scatterer]]
/// depth_m = 0.05        # on the beam axis, range 5 cm
/// amplitude = 1.0
///
/// [[scatterer]]
/// delay_s = 1.2e-4      # on the beam axis, given by delay
/// amplitude = -0.4
///
/// [[scatterer]]
/// depth_m = 0.08        # fixed point 1 cm off the array normal
/// lateral_m = 0.01
/// amplitude = 0.5
///
/// [speckle]
/// density_per_mm = 5.0
/// amplitude_std = 0.1
/// seed = 7
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    #[serde(default)]
    scatterer: Vec<ScattererEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speckle: Option<SpeckleSpec>,
}

impl PhantomSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: PhantomSpec = toml::from_str(text).map_err(|e| Error::format("phantom file", e.to_string()))?;
        for (i, s) in spec.scatterer.iter().enumerate() {
            let placed = s.depth_m.is_some() as u8 + s.delay_s.is_some() as u8;
            if placed != 1 {
                return Err(Error::format(
                    "phantom file",
                    format!("scatterer {i} needs exactly one of depth_m or delay_s"),
                ));
            }
            if s.lateral_m.is_some() && s.depth_m.is_none() {
                return Err(Error::format(
                    "phantom file",
                    format!("scatterer {i}: lateral_m requires depth_m"),
                ));
            }
        }
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("phantom spec serializes")
    }

    pub fn with_speckle(mut self, speckle: SpeckleSpec) -> Self {
        self.speckle = Some(speckle);
        self
    }

    pub fn add_on_axis_delay(&mut self, delay: f64, amplitude: f64) {
        self.scatterer.push(ScattererEntry {
            delay_s: Some(delay),
            amplitude,
            ..Default::default()
        });
    }

    /// Listed scatterers plus speckle drawn with `seed + stream`, so each
    /// beam direction can get its own speckle realization.
    pub fn realize(&self, grid: &GridSpec, speed_of_sound: f64, stream: u64) -> Result<Phantom> {
        let mut scatterers: Vec<Scatterer> = self
            .scatterer
            .iter()
            .map(|s| {
                let position = match (s.delay_s, s.depth_m, s.lateral_m) {
                    (Some(delay), _, _) => Position::OnAxis { delay },
                    (None, Some(z), Some(x)) => Position::Point { x, z },
                    (None, Some(r), None) => Position::OnAxis {
                        delay: 2.0 * r / speed_of_sound,
                    },
                    (None, None, _) => unreachable!("validated in parse"),
                };
                Scatterer {
                    position,
                    amplitude: s.amplitude,
                }
            })
            .collect();
        if let Some(sp) = self.speckle {
            let speckle = make_speckle_phantom(
                sp.seed.wrapping_add(stream),
                sp.density_per_mm,
                sp.amplitude_std,
                grid,
                speed_of_sound,
            )?;
            scatterers.extend(speckle.scatterers);
        }
        Ok(Phantom { scatterers })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Simulated,
    File,
}

/// Raw element signals for one transmit direction, `elements × samples`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    pub samples: Vec<f64>,
    pub elements: usize,
    pub len: usize,
    pub theta: f64,
    pub sample_rate: f64,
    pub provenance: Provenance,
}

impl ChannelFrame {
    pub fn zeros(elements: usize, len: usize, theta: f64, sample_rate: f64) -> Self {
        Self {
            samples: vec![0.0; elements * len],
            elements,
            len,
            theta,
            sample_rate,
            provenance: Provenance::Simulated,
        }
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.samples[m * self.len..(m + 1) * self.len]
    }

    pub fn row_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.samples[m * self.len..(m + 1) * self.len]
    }

    pub fn check_against(&self, setup: &Setup) -> Result<()> {
        let grid = setup.grid()?;
        if self.elements != setup.geometry.element_count() || self.len != grid.samples {
            return Err(Error::Dimension(format!(
                "frame is {}x{}, setup expects {}x{}",
                self.elements,
                self.len,
                setup.geometry.element_count(),
                grid.samples
            )));
        }
        Ok(())
    }

    /// `alpha * self + other`, elementwise.
    pub fn axpy(&self, alpha: f64, other: &ChannelFrame) -> Result<ChannelFrame> {
        if self.elements != other.elements || self.len != other.len {
            return Err(Error::Dimension("frames differ in shape".into()));
        }
        let mut out = other.clone();
        for (o, &s) in out.samples.iter_mut().zip(&self.samples) {
            *o += alpha * s;
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(30 + 4 * self.samples.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.elements as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len as u32).to_le_bytes());
        buf.extend_from_slice(&self.theta.to_le_bytes());
        buf.extend_from_slice(&self.sample_rate.to_le_bytes());
        for &v in &self.samples {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 30 || &bytes[..4] != MAGIC {
            return Err(Error::format("frame file", "missing SNQB header"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::format("frame file", format!("unsupported version {version}")));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let elements = u32_at(6);
        let len = u32_at(10);
        let theta = f64_at(14);
        let sample_rate = f64_at(22);
        let count = elements
            .checked_mul(len)
            .ok_or_else(|| Error::format("frame file", "dimensions overflow"))?;
        let body = &bytes[30..];
        if body.len() != 4 * count {
            return Err(Error::format(
                "frame file",
                format!("expected {} sample bytes, found {}", 4 * count, body.len()),
            ));
        }
        let samples = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            samples,
            elements,
            len,
            theta,
            sample_rate,
            provenance: Provenance::File,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

const MAGIC: &[u8; 4] = b"SNQB";
const FORMAT_VERSION: u16 = 1;

/// Simulates the element signals with the setup's default pulse.
pub fn simulate_channels(phantom: &Phantom, setup: &Setup, theta: f64) -> Result<ChannelFrame> {
    simulate_channels_with(phantom, setup, &PulseModel::from_config(&setup.imaging), theta)
}

/// Each scatterer reflects the pulse transmitted along `theta`; element `m`
/// receives the replica at `(R + d_m) / c`, where `R` is the range from
/// the reference element and `d_m` the return path to element `m`. For a
/// scatterer on the axis at reference delay `t_l` this is
/// `t_l/2 + d_m(t_l/2; θ)/c`, and exactly `t_l` at the reference element.
pub fn simulate_channels_with(
    phantom: &Phantom,
    setup: &Setup,
    pulse: &PulseModel,
    theta: f64,
) -> Result<ChannelFrame> {
    let grid = setup.grid()?;
    let geom = &setup.geometry;
    let c = geom.speed_of_sound();
    for (index, s) in phantom.scatterers.iter().enumerate() {
        let d = s.reference_delay(c);
        if !(d > 0.0 && d < grid.duration) {
            return Err(Error::Scatterer {
                index,
                reason: format!("reference delay {d:e} s not in (0, {:e}) s", grid.duration),
            });
        }
        if !s.amplitude.is_finite() {
            return Err(Error::Scatterer {
                index,
                reason: "amplitude is not finite".into(),
            });
        }
    }
    let (sin, cos) = theta.sin_cos();
    let spreading = setup.processing.spreading;
    let fs = grid.sample_rate;
    let half = pulse.envelope.half_support();
    let mut frame = ChannelFrame::zeros(geom.element_count(), grid.samples, theta, fs);
    let len = frame.len;
    frame.samples.par_chunks_mut(len).enumerate().for_each(|(m, row)| {
        let delta = geom.element_offsets()[m];
        for s in &phantom.scatterers {
            let (range, ret, arrival) = match s.position {
                Position::OnAxis { delay } if delta == 0.0 => (c * delay / 2.0, c * delay / 2.0, delay),
                Position::OnAxis { delay } => {
                    let range = c * delay / 2.0;
                    let ret = (range * cos).hypot(delta - range * sin);
                    (range, ret, delay / 2.0 + ret / c)
                }
                Position::Point { x, z } => {
                    let (range, ret) = (x.hypot(z), (x - delta).hypot(z));
                    (range, ret, (range + ret) / c)
                }
            };
            let amp = if spreading { s.amplitude * range / ret } else { s.amplitude };
            let lo = ((arrival - half) * fs).ceil().max(0.0) as usize;
            let hi = (((arrival + half) * fs).floor() as i64).min(len as i64 - 1);
            if hi < lo as i64 {
                continue;
            }
            for (n, v) in row.iter_mut().enumerate().take(hi as usize + 1).skip(lo) {
                *v += amp * pulse.value(n as f64 / fs - arrival);
            }
        }
    });
    Ok(frame)
}

/// Adds white Gaussian noise at the given SNR relative to the frame's
/// mean signal power.
pub fn add_noise(frame: &mut ChannelFrame, snr_db: f64, seed: u64) -> f64 {
    let power = frame.samples.iter().map(|v| v * v).sum::<f64>() / frame.samples.len().max(1) as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        for v in &mut frame.samples {
            *v += normal.sample(&mut rng);
        }
    }
    sigma
}
