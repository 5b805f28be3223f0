//! B-mode image formation: envelope detection, log compression and scan
//! conversion from (range, angle) lines to a Cartesian pixel grid.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::config::Setup;
use crate::dft::Dft;
use crate::error::{Error, Result};
use crate::time_bf::BeamformedLine;

/// Magnitude of the analytic signal, built by zeroing the negative half
/// of the spectrum.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let dft = Dft::new(n);
    let mut buf = dft.forward_real(x);
    for (k, v) in buf.iter_mut().enumerate() {
        let positive = k > 0 && 2 * k < n;
        let edge = k == 0 || 2 * k == n;
        if positive {
            *v *= 2.0;
        } else if !edge {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    dft.inverse_in_place(&mut buf);
    buf.iter().map(|v| v.norm() / n as f64).collect()
}

/// Gray levels for `20 log10(env / reference)` clipped to
/// `[-dynamic_range_db, 0]` and mapped linearly onto 0..=255, rounding
/// halves up. A zero reference yields an all-zero result.
pub fn log_compress_with_reference(env: &[f64], dynamic_range_db: f64, reference: f64) -> Result<Vec<u8>> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::config("dynamic_range", "must be positive"));
    }
    if reference <= 0.0 {
        return Ok(vec![0; env.len()]);
    }
    Ok(env
        .iter()
        .map(|&e| {
            if e <= 0.0 {
                return 0;
            }
            let db = (20.0 * (e / reference).log10()).clamp(-dynamic_range_db, 0.0);
            let level = (db + dynamic_range_db) / dynamic_range_db * 255.0;
            // the nudge keeps exact halves from landing a hair below .5
            (level + 0.5 + 1e-9).floor().min(255.0) as u8
        })
        .collect())
}

/// [`log_compress_with_reference`] against the envelope's own maximum.
pub fn log_compress(env: &[f64], dynamic_range_db: f64) -> Result<Vec<u8>> {
    let max = env.iter().cloned().fold(0.0, f64::max);
    log_compress_with_reference(env, dynamic_range_db, max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BModeImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, row 0 is the shallowest.
    pub pixels: Vec<u8>,
    /// Lateral extent `(x_min, x_max)` in meters.
    pub x_range: (f64, f64),
    /// Depth extent `(z_min, z_max)` in meters.
    pub z_range: (f64, f64),
    pub dynamic_range_db: f64,
}

impl BModeImage {
    pub fn pixel(&self, x: usize, z: usize) -> u8 {
        self.pixels[z * self.width + x]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::Dimension("pixel buffer does not match image size".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    /// Pixel center in meters.
    pub fn position(&self, x: usize, z: usize) -> (f64, f64) {
        let (x0, x1) = self.x_range;
        let (z0, z1) = self.z_range;
        (
            x0 + (x as f64 + 0.5) / self.width as f64 * (x1 - x0),
            z0 + (z as f64 + 0.5) / self.height as f64 * (z1 - z0),
        )
    }
}

/// Sector geometry for scan conversion: lines at `thetas` (increasing),
/// sample `n` at range `n * range_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sector {
    pub thetas: Vec<f64>,
    pub range_step: f64,
    pub samples: usize,
}

impl Sector {
    pub fn from_setup(setup: &Setup) -> Result<Self> {
        let grid = setup.grid()?;
        Ok(Self {
            thetas: setup.imaging.directions.clone(),
            range_step: setup.geometry.speed_of_sound() / (2.0 * grid.sample_rate),
            samples: grid.samples,
        })
    }

    fn max_range(&self) -> f64 {
        (self.samples - 1) as f64 * self.range_step
    }

    fn extent(&self) -> ((f64, f64), (f64, f64)) {
        let r = self.max_range();
        let first = self.thetas[0];
        let last = *self.thetas.last().unwrap();
        (((r * first.sin()).min(0.0), (r * last.sin()).max(0.0)), (0.0, r))
    }

    /// Fractional (line, sample) coordinates of a point, if inside the
    /// sector.
    fn locate(&self, x: f64, z: f64) -> Option<(usize, f64, f64)> {
        let r = x.hypot(z);
        let th = x.atan2(z);
        let first = self.thetas[0];
        let last = *self.thetas.last().unwrap();
        if th < first || th > last || r > self.max_range() {
            return None;
        }
        let i = match self.thetas.partition_point(|&t| t <= th) {
            0 => 0,
            p => (p - 1).min(self.thetas.len() - 2),
        };
        let a = (th - self.thetas[i]) / (self.thetas[i + 1] - self.thetas[i]);
        Some((i, a, r / self.range_step))
    }

    /// Pixels that fall inside the sector for the given output size.
    pub fn mask(&self, width: usize, height: usize) -> Vec<bool> {
        let ((x0, x1), (z0, z1)) = self.extent();
        let mut out = Vec::with_capacity(width * height);
        for zi in 0..height {
            let z = z0 + (zi as f64 + 0.5) / height as f64 * (z1 - z0);
            for xi in 0..width {
                let x = x0 + (xi as f64 + 0.5) / width as f64 * (x1 - x0);
                out.push(self.locate(x, z).is_some());
            }
        }
        out
    }
}

/// Bilinear interpolation from per-direction gray-level lines onto a
/// `width × height` Cartesian grid covering the sector's bounding box.
pub fn scan_convert(lines: &[Vec<u8>], sector: &Sector, width: usize, height: usize, dynamic_range_db: f64) -> Result<BModeImage> {
    if width < 2 || height < 2 {
        return Err(Error::config("size", format!("{width}x{height} is smaller than 2x2")));
    }
    if sector.thetas.len() < 2 {
        return Err(Error::config("directions", "scan conversion needs at least two directions"));
    }
    if lines.len() != sector.thetas.len() || lines.iter().any(|l| l.len() != sector.samples) {
        return Err(Error::Dimension("lines do not match the sector geometry".into()));
    }
    let ((x0, x1), (z0, z1)) = sector.extent();
    let mut pixels = vec![0u8; width * height];
    for zi in 0..height {
        let z = z0 + (zi as f64 + 0.5) / height as f64 * (z1 - z0);
        for xi in 0..width {
            let x = x0 + (xi as f64 + 0.5) / width as f64 * (x1 - x0);
            let Some((i, a, s)) = sector.locate(x, z) else { continue };
            let n = (s.floor() as usize).min(sector.samples - 2);
            let b = s - n as f64;
            let v = |line: &Vec<u8>| (1.0 - b) * line[n] as f64 + b * line[n + 1] as f64;
            let value = (1.0 - a) * v(&lines[i]) + a * v(&lines[i + 1]);
            pixels[zi * width + xi] = (value + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(BModeImage {
        width,
        height,
        pixels,
        x_range: (x0, x1),
        z_range: (z0, z1),
        dynamic_range_db,
    })
}

/// Envelope detection and log compression of every line against the
/// brightest sample of the whole set, then scan conversion.
pub fn render(lines: &[BeamformedLine], setup: &Setup, width: usize, height: usize, dynamic_range_db: f64) -> Result<BModeImage> {
    let sector = Sector::from_setup(setup)?;
    let envs: Vec<Vec<f64>> = lines.iter().map(|l| envelope(&l.samples)).collect();
    let reference = envs.iter().flatten().cloned().fold(0.0, f64::max);
    let gray = envs
        .iter()
        .map(|e| log_compress_with_reference(e, dynamic_range_db, reference))
        .collect::<Result<Vec<_>>>()?;
    scan_convert(&gray, &sector, width, height, dynamic_range_db)
}

/// Parses `WIDTHxHEIGHT`.
pub fn parse_size(text: &str) -> Result<(usize, usize)> {
    let (w, h) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::config("size", format!("`{text}` is not WIDTHxHEIGHT")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::config("size", format!("`{text}` is not WIDTHxHEIGHT")))
    };
    Ok((parse(w)?, parse(h)?))
}
