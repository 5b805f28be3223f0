//! Imaging setup: array geometry, acquisition parameters and the grids
//! derived from them.
//!
//! Configuration files are plain `key = value unit` lines. Keys that are
//! omitted fall back to the shipped cardiac setup (64 elements, 16 cm depth,
//! 3.1 MHz carrier, 2 MHz bandwidth, 16 MHz sampling).

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::units::{format_quantity, parse_quantity, Dimension};

/// Linear array along the x axis with the reference element at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    element_offsets: Vec<f64>,
    speed_of_sound: f64,
    reference_index: usize,
}

impl ArrayGeometry {
    pub fn new(element_offsets: Vec<f64>, speed_of_sound: f64, reference_index: usize) -> Result<Self> {
        if element_offsets.is_empty() {
            return Err(Error::config("elements", "array needs at least one element"));
        }
        if !(speed_of_sound > 0.0 && speed_of_sound.is_finite()) {
            return Err(Error::config("speed_of_sound", "must be positive"));
        }
        match element_offsets.get(reference_index) {
            None => {
                return Err(Error::config(
                    "reference_element",
                    format!("index {reference_index} out of range for {} elements", element_offsets.len()),
                ))
            }
            Some(&d) if d != 0.0 => {
                return Err(Error::config("reference_element", "reference element must sit at offset 0"))
            }
            _ => {}
        }
        if element_offsets.iter().any(|d| !d.is_finite()) {
            return Err(Error::config("element_offsets", "offsets must be finite"));
        }
        Ok(Self {
            element_offsets,
            speed_of_sound,
            reference_index,
        })
    }

    /// Uniform array with `count` elements spaced by `pitch`, offsets
    /// measured from element `reference_index`.
    pub fn uniform(count: usize, pitch: f64, reference_index: usize, speed_of_sound: f64) -> Result<Self> {
        if !(pitch > 0.0) {
            return Err(Error::config("pitch", "must be positive"));
        }
        let offsets = (0..count)
            .map(|m| (m as f64 - reference_index as f64) * pitch)
            .collect();
        Self::new(offsets, speed_of_sound, reference_index)
    }

    pub fn element_count(&self) -> usize {
        self.element_offsets.len()
    }

    pub fn element_offsets(&self) -> &[f64] {
        &self.element_offsets
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    /// One-way travel time from the reference element to element `m`, δ_m / c.
    pub fn gamma(&self, m: usize) -> f64 {
        self.element_offsets[m] / self.speed_of_sound
    }

    pub fn gammas(&self) -> Vec<f64> {
        (0..self.element_count()).map(|m| self.gamma(m)).collect()
    }

    pub fn aperture(&self) -> f64 {
        let lo = self.element_offsets.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.element_offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Acquisition parameters for one imaging cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagingConfig {
    pub depth: f64,
    pub carrier: f64,
    /// Two-sided passband width of the pulse envelope.
    pub bandwidth: f64,
    pub sample_rate: f64,
    /// Beam directions in radians from the array normal, strictly increasing.
    pub directions: Vec<f64>,
    pub dynamic_range_db: f64,
}

impl ImagingConfig {
    pub fn validate(&self) -> Result<()> {
        positive("depth", self.depth)?;
        positive("sample_rate", self.sample_rate)?;
        positive("carrier", self.carrier).or_else(|e| if self.carrier == 0.0 { Ok(()) } else { Err(e) })?;
        positive("bandwidth", self.bandwidth)?;
        positive("dynamic_range", self.dynamic_range_db)?;
        if self.carrier + self.bandwidth / 2.0 >= self.sample_rate / 2.0 {
            return Err(Error::config(
                "sample_rate",
                format!(
                    "passband edge {} Hz is not below Nyquist {} Hz",
                    self.carrier + self.bandwidth / 2.0,
                    self.sample_rate / 2.0
                ),
            ));
        }
        if self.directions.is_empty() {
            return Err(Error::config("directions", "at least one direction is required"));
        }
        for (i, &th) in self.directions.iter().enumerate() {
            if !(th > -FRAC_PI_2 && th < FRAC_PI_2) {
                return Err(Error::config("directions", format!("direction {i} ({th} rad) is outside (-pi/2, pi/2)")));
            }
            if i > 0 && th <= self.directions[i - 1] {
                return Err(Error::config("directions", "directions must be strictly increasing"));
            }
        }
        Ok(())
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be positive, got {v}")))
    }
}

/// Knobs of the processing chain that are not part of the acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessingConfig {
    /// Depth at which beamformed lines start.
    pub line_start_depth: f64,
    /// Raised-cosine ramp length (seconds of line time) at both line ends.
    pub line_taper: f64,
    /// Pulse band edge relative to the spectral peak, in dB (negative).
    pub band_floor_db: f64,
    /// Fraction of kernel energy allowed outside ν(k).
    pub kernel_epsilon: f64,
    pub noise_snr_db: Option<f64>,
    pub spreading: bool,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        Self {
            line_start_depth: 0.02,
            line_taper: 20e-6,
            band_floor_db: -30.0,
            kernel_epsilon: 1e-3,
            noise_snr_db: None,
            spreading: false,
        }
    }
}

impl ProcessingConfig {
    pub fn band_threshold(&self) -> f64 {
        10f64.powf(self.band_floor_db / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.line_start_depth >= 0.0) {
            return Err(Error::config("line_start", "must be non-negative"));
        }
        if !(self.line_taper >= 0.0) {
            return Err(Error::config("line_taper", "must be non-negative"));
        }
        if !(self.band_floor_db < 0.0) {
            return Err(Error::config("band_floor", "must be negative dB"));
        }
        if !(self.kernel_epsilon > 0.0 && self.kernel_epsilon < 1.0) {
            return Err(Error::config("kernel_epsilon", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Time and frequency grids of one acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Round-trip time to the imaging depth, 2r/c.
    pub duration: f64,
    pub samples: usize,
    pub sample_rate: f64,
}

impl GridSpec {
    /// Length of the sampled window, N / f_s. This is the period of the
    /// DFT and is at most `duration`.
    pub fn period(&self) -> f64 {
        self.samples as f64 / self.sample_rate
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 / self.sample_rate
    }

    pub fn time_axis(&self) -> Vec<f64> {
        (0..self.samples).map(|n| self.time(n)).collect()
    }

    /// Frequency of DFT bin `k` in Hz.
    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate / self.samples as f64
    }
}

/// Builds the sampling grid. N = ⌊T·f_s⌋ with T = 2r/c.
pub fn derive_grid(cfg: &ImagingConfig, geom: &ArrayGeometry) -> Result<GridSpec> {
    positive("depth", cfg.depth)?;
    positive("sample_rate", cfg.sample_rate)?;
    positive("speed_of_sound", geom.speed_of_sound())?;
    let duration = 2.0 * cfg.depth / geom.speed_of_sound();
    // products such as 210e-6 * 16e6 land a few ulps below the integer
    let samples = (duration * cfg.sample_rate * (1.0 + 1e-12)).floor();
    if samples < 2.0 {
        return Err(Error::config("depth", format!("window holds {samples} samples, need at least 2")));
    }
    Ok(GridSpec {
        duration,
        samples: samples as usize,
        sample_rate: cfg.sample_rate,
    })
}

/// Weight applied to a beamformed line as a function of its time axis:
/// zero before `start`, raised-cosine ramps of length `taper` after
/// `start` and before `end`, one in between.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineWindow {
    pub start: f64,
    pub taper: f64,
    pub end: f64,
}

impl LineWindow {
    /// Window that keeps the whole `[0, end)` range unweighted.
    pub fn full(end: f64) -> Self {
        Self { start: 0.0, taper: 0.0, end }
    }

    pub fn is_trivial(&self) -> bool {
        self.start <= 0.0 && self.taper <= 0.0
    }

    pub fn weight(&self, t: f64) -> f64 {
        if t < self.start || t >= self.end {
            return 0.0;
        }
        if self.taper <= 0.0 {
            return 1.0;
        }
        let ramp = |x: f64| {
            if x >= 1.0 {
                1.0
            } else {
                0.5 - 0.5 * (std::f64::consts::PI * x).cos()
            }
        };
        ramp((t - self.start) / self.taper) * ramp((self.end - t) / self.taper)
    }
}

fn entries_of(text: &str) -> Result<BTreeMap<String, String>> {
    let mut entries = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format("config", format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::config(key, "unknown key"));
        }
        entries.insert(key, value.trim().to_string());
    }
    Ok(entries)
}

/// Complete description of an experiment's physical and processing setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub geometry: ArrayGeometry,
    pub imaging: ImagingConfig,
    pub processing: ProcessingConfig,
}

const KEYS: &[&str] = &[
    "elements",
    "pitch",
    "reference_element",
    "element_offsets",
    "speed_of_sound",
    "depth",
    "carrier",
    "bandwidth",
    "sample_rate",
    "sector_min",
    "sector_max",
    "directions",
    "direction_list",
    "dynamic_range",
    "line_start",
    "line_taper",
    "band_floor",
    "kernel_epsilon",
    "noise_snr",
    "spreading",
];

impl Setup {
    /// The cardiac acquisition: 64 elements at half-wavelength pitch,
    /// r = 16 cm, c = 1540 m/s, f0 = 3.1 MHz, 2 MHz band, f_s = 16 MHz,
    /// 64 directions over a 90 degree sector.
    pub fn cardiac() -> Self {
        Self::parse("").expect("built-in defaults are valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(&entries_of(text)?)
    }

    /// Applies `key = value` overrides on top of this setup. Overriding
    /// `elements` or `pitch` rebuilds a uniform array (keeping the other
    /// of the two), and overriding `directions`, `sector_min` or
    /// `sector_max` rebuilds an evenly spaced sector the same way.
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut entries = entries_of(&self.to_text())?;
        let mut text = String::new();
        for o in overrides {
            text.push_str(o);
            text.push('\n');
        }
        let changes = entries_of(&text)?;
        let touched = |keys: &[&str]| keys.iter().any(|k| changes.contains_key(*k));
        if touched(&["elements", "pitch"]) {
            let offsets = self.geometry.element_offsets();
            entries.remove("element_offsets");
            entries.remove("reference_element");
            entries.insert("elements".into(), offsets.len().to_string());
            if offsets.len() >= 2 {
                entries.insert("pitch".into(), format_quantity(offsets[1] - offsets[0], Dimension::Length));
            }
        }
        if touched(&["element_offsets"]) {
            entries.remove("reference_element");
        }
        if touched(&["directions", "sector_min", "sector_max"]) {
            let dirs = &self.imaging.directions;
            entries.remove("direction_list");
            entries.insert("directions".into(), dirs.len().to_string());
            entries.insert("sector_min".into(), format_quantity(dirs[0], Dimension::Angle));
            entries.insert("sector_max".into(), format_quantity(*dirs.last().unwrap(), Dimension::Angle));
        }
        entries.extend(changes);
        Self::from_entries(&entries)
    }

    fn from_entries(e: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str, d: Dimension| e.get(k).map(|v| parse_quantity(k, v, d)).transpose();
        let get_f = |k: &str| {
            e.get(k)
                .map(|v| v.parse::<f64>().map_err(|_| Error::config(k, format!("`{v}` is not a number"))))
                .transpose()
        };
        let get_usize = |k: &str| {
            e.get(k)
                .map(|v| v.parse::<usize>().map_err(|_| Error::config(k, format!("`{v}` is not a non-negative integer"))))
                .transpose()
        };
        let list = |k: &str, d: Dimension| -> Result<Option<Vec<f64>>> {
            e.get(k)
                .map(|v| v.split(',').map(|s| parse_quantity(k, s, d)).collect())
                .transpose()
        };

        let speed = get("speed_of_sound", Dimension::Speed)?.unwrap_or(1540.0);
        let carrier = get("carrier", Dimension::Frequency)?.unwrap_or(3.1e6);

        let geometry = if let Some(offsets) = list("element_offsets", Dimension::Length)? {
            let reference = match get_usize("reference_element")? {
                Some(r) => r,
                None => offsets
                    .iter()
                    .position(|&d| d == 0.0)
                    .ok_or_else(|| Error::config("element_offsets", "no element at offset 0"))?,
            };
            ArrayGeometry::new(offsets, speed, reference)?
        } else {
            let count = get_usize("elements")?.unwrap_or(64);
            if count == 0 {
                return Err(Error::config("elements", "array needs at least one element"));
            }
            let pitch = match get("pitch", Dimension::Length)? {
                Some(p) => p,
                None if carrier > 0.0 => speed / carrier / 2.0,
                None => return Err(Error::config("pitch", "required when the carrier is 0 Hz")),
            };
            let reference = get_usize("reference_element")?.unwrap_or(count / 2);
            ArrayGeometry::uniform(count, pitch, reference, speed)?
        };

        let directions = if let Some(d) = list("direction_list", Dimension::Angle)? {
            d
        } else {
            let lo = get("sector_min", Dimension::Angle)?.unwrap_or(-std::f64::consts::FRAC_PI_4);
            let hi = get("sector_max", Dimension::Angle)?.unwrap_or(std::f64::consts::FRAC_PI_4);
            let count = get_usize("directions")?.unwrap_or(64);
            match count {
                0 => return Err(Error::config("directions", "at least one direction is required")),
                1 => vec![0.5 * (lo + hi)],
                _ => (0..count)
                    .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                    .collect(),
            }
        };

        let imaging = ImagingConfig {
            depth: get("depth", Dimension::Length)?.unwrap_or(0.16),
            carrier,
            bandwidth: get("bandwidth", Dimension::Frequency)?.unwrap_or(2e6),
            sample_rate: get("sample_rate", Dimension::Frequency)?.unwrap_or(16e6),
            directions,
            dynamic_range_db: get("dynamic_range", Dimension::Decibel)?.unwrap_or(60.0),
        };
        imaging.validate()?;

        let defaults = ProcessingConfig::default();
        let noise_snr_db = match e.get("noise_snr").map(|s| s.as_str()) {
            None | Some("off") => None,
            Some(v) => Some(parse_quantity("noise_snr", v, Dimension::Decibel)?),
        };
        let spreading = match e.get("spreading").map(|s| s.as_str()) {
            None | Some("false") | Some("off") => false,
            Some("true") | Some("on") => true,
            Some(v) => return Err(Error::config("spreading", format!("`{v}` is not a boolean"))),
        };
        let processing = ProcessingConfig {
            line_start_depth: get("line_start", Dimension::Length)?.unwrap_or(defaults.line_start_depth),
            line_taper: get("line_taper", Dimension::Time)?.unwrap_or(defaults.line_taper),
            band_floor_db: get("band_floor", Dimension::Decibel)?.unwrap_or(defaults.band_floor_db),
            kernel_epsilon: get_f("kernel_epsilon")?.unwrap_or(defaults.kernel_epsilon),
            noise_snr_db,
            spreading,
        };
        processing.validate()?;

        let setup = Setup {
            geometry,
            imaging,
            processing,
        };
        setup.grid()?;
        Ok(setup)
    }

    /// Serializes every setting explicitly in SI units.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let g = &self.geometry;
        let offsets: Vec<String> = g
            .element_offsets()
            .iter()
            .map(|&d| format_quantity(d, Dimension::Length))
            .collect();
        let _ = writeln!(s, "element_offsets = {}", offsets.join(", "));
        let _ = writeln!(s, "reference_element = {}", g.reference_index());
        let _ = writeln!(s, "speed_of_sound = {}", format_quantity(g.speed_of_sound(), Dimension::Speed));
        let im = &self.imaging;
        let _ = writeln!(s, "depth = {}", format_quantity(im.depth, Dimension::Length));
        let _ = writeln!(s, "carrier = {}", format_quantity(im.carrier, Dimension::Frequency));
        let _ = writeln!(s, "bandwidth = {}", format_quantity(im.bandwidth, Dimension::Frequency));
        let _ = writeln!(s, "sample_rate = {}", format_quantity(im.sample_rate, Dimension::Frequency));
        let dirs: Vec<String> = im
            .directions
            .iter()
            .map(|&d| format_quantity(d, Dimension::Angle))
            .collect();
        let _ = writeln!(s, "direction_list = {}", dirs.join(", "));
        let _ = writeln!(s, "dynamic_range = {}", format_quantity(im.dynamic_range_db, Dimension::Decibel));
        let p = &self.processing;
        let _ = writeln!(s, "line_start = {}", format_quantity(p.line_start_depth, Dimension::Length));
        let _ = writeln!(s, "line_taper = {}", format_quantity(p.line_taper, Dimension::Time));
        let _ = writeln!(s, "band_floor = {}", format_quantity(p.band_floor_db, Dimension::Decibel));
        let _ = writeln!(s, "kernel_epsilon = {:e}", p.kernel_epsilon);
        match p.noise_snr_db {
            Some(snr) => {
                let _ = writeln!(s, "noise_snr = {}", format_quantity(snr, Dimension::Decibel));
            }
            None => {
                let _ = writeln!(s, "noise_snr = off");
            }
        }
        let _ = writeln!(s, "spreading = {}", p.spreading);
        s
    }

    pub fn grid(&self) -> Result<GridSpec> {
        derive_grid(&self.imaging, &self.geometry)
    }

    pub fn line_window(&self) -> Result<LineWindow> {
        let grid = self.grid()?;
        Ok(LineWindow {
            start: 2.0 * self.processing.line_start_depth / self.geometry.speed_of_sound(),
            taper: self.processing.line_taper,
            end: grid.period(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cfg() -> (ImagingConfig, ArrayGeometry) {
        let geom = ArrayGeometry::uniform(1, 1.0, 0, 1540.0).unwrap();
        let cfg = ImagingConfig {
            depth: 770.0,
            carrier: 1.0,
            bandwidth: 1.0,
            sample_rate: 8.0,
            directions: vec![0.0],
            dynamic_range_db: 60.0,
        };
        (cfg, geom)
    }

    #[test]
    fn cardiac_duration_and_samples() {
        let s = Setup::cardiac();
        let g = s.grid().unwrap();
        assert!((g.duration - 207.79e-6).abs() < 0.01e-6, "T = {}", g.duration);
        assert_eq!(g.samples, 3324);
        assert_eq!(s.geometry.element_count(), 64);
        let s = Setup::cardiac().with_overrides(["elements = 8", "directions = 5"]).unwrap();
        assert_eq!(s.geometry.element_count(), 8);
        assert_eq!(s.geometry.reference_index(), 4);
        assert!((s.geometry.gamma(5) - Setup::cardiac().geometry.gamma(33)).abs() < 1e-15);
        assert_eq!(s.imaging.directions.len(), 5);
        assert!((s.imaging.directions[4] - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        let s = s.with_overrides(["direction_list = 0 deg"]).unwrap();
        assert_eq!(s.imaging.directions, vec![0.0]);
    }

    #[test]
    fn paper_rounded_duration_gives_3360_samples() {
        let mut s = Setup::cardiac();
        s.imaging.depth = 210e-6 * 1540.0 / 2.0;
        assert_eq!(s.grid().unwrap().samples, 3360);
    }

    #[test]
    fn unit_scale_grid() {
        let (cfg, geom) = unit_cfg();
        let g = derive_grid(&cfg, &geom).unwrap();
        assert_eq!(g.duration, 1.0);
        assert_eq!(g.samples, 8);
        let axis = g.time_axis();
        assert_eq!(axis.len(), 8);
        for (n, t) in axis.iter().enumerate() {
            assert_eq!(*t, 0.125 * n as f64);
        }
    }

    #[test]
    fn doubling_rate_doubles_samples() {
        let s = Setup::cardiac();
        let g1 = s.grid().unwrap();
        let mut s2 = s.clone();
        s2.imaging.sample_rate *= 2.0;
        let g2 = s2.grid().unwrap();
        assert_eq!(g1.duration, g2.duration);
        assert!(g2.samples == 2 * g1.samples || g2.samples == 2 * g1.samples + 1);
        assert_eq!(s.grid().unwrap(), g1);
    }

    #[test]
    fn rejects_bad_fields_by_name() {
        let (mut cfg, geom) = unit_cfg();
        cfg.depth = -1.0;
        match derive_grid(&cfg, &geom) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "depth"),
            other => panic!("unexpected {other:?}"),
        }
        cfg.depth = 1.0;
        cfg.sample_rate = 0.0;
        match derive_grid(&cfg, &geom) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "sample_rate"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ArrayGeometry::uniform(4, 1e-3, 1, 0.0).is_err());
    }

    #[test]
    fn reference_must_be_at_origin() {
        assert!(ArrayGeometry::new(vec![-1e-3, 1e-3], 1540.0, 0).is_err());
        let g = ArrayGeometry::new(vec![-1e-3, 0.0, 1e-3], 1540.0, 1).unwrap();
        assert_eq!(g.gamma(1), 0.0);
    }

    #[test]
    fn passband_must_fit_below_nyquist() {
        let err = Setup::parse("carrier = 7.5 MHz\nbandwidth = 2 MHz").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "sample_rate"));
    }

    #[test]
    fn directions_must_increase() {
        assert!(Setup::parse("direction_list = 0.1 rad, 0.0 rad").is_err());
        assert!(Setup::parse("direction_list = 95 deg").is_err());
    }

    #[test]
    fn text_round_trip() {
        let s = Setup::parse("elements = 16\npitch = 0.3 mm\nnoise_snr = 20 dB\ndirections = 5").unwrap();
        let back = Setup::parse(&s.to_text()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn overrides_replace_keys() {
        let s = Setup::cardiac().with_overrides(["depth = 8 cm"]).unwrap();
        assert_eq!(s.imaging.depth, 0.08);
        assert_eq!(s.geometry.element_count(), 64);
        let s = Setup::cardiac().with_overrides(["elements = 8", "directions = 5"]).unwrap();
        assert_eq!(s.geometry.element_count(), 8);
        assert_eq!(s.geometry.reference_index(), 4);
        assert!((s.geometry.gamma(5) - Setup::cardiac().geometry.gamma(33)).abs() < 1e-15);
        assert_eq!(s.imaging.directions.len(), 5);
        assert!((s.imaging.directions[4] - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        let s = s.with_overrides(["direction_list = 0 deg"]).unwrap();
        assert_eq!(s.imaging.directions, vec![0.0]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Setup::parse("frobnicate = 3").is_err());
        assert!(Setup::parse("depth = 16").is_err());
    }

    #[test]
    fn window_shape() {
        let w = LineWindow { start: 1.0, taper: 2.0, end: 10.0 };
        assert_eq!(w.weight(0.5), 0.0);
        assert_eq!(w.weight(1.0), 0.0);
        assert!((w.weight(2.0) - 0.5).abs() < 1e-15);
        assert_eq!(w.weight(5.0), 1.0);
        assert!((w.weight(9.0) - 0.5).abs() < 1e-15);
        assert_eq!(w.weight(10.0), 0.0);
        let f = LineWindow::full(10.0);
        assert_eq!(f.weight(0.0), 1.0);
        assert_eq!(f.weight(9.99), 1.0);
    }
}
