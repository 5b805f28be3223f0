//! Parsing of `value unit` strings into SI quantities.
//!
//! Every dimensional setting in a config file carries its unit, so a
//! carrier written as `3.1 MHz` and one written as `3100000 Hz` are the
//! same value and a bare `3.1` is rejected.

use crate::error::{Error, Result};

/// Physical dimension expected for a configuration value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Length,
    Time,
    Frequency,
    Speed,
    Angle,
    Decibel,
}

impl Dimension {
    fn units(self) -> &'static [(&'static str, f64)] {
        match self {
            Dimension::Length => &[("m", 1.0), ("cm", 1e-2), ("mm", 1e-3), ("um", 1e-6)],
            Dimension::Time => &[("s", 1.0), ("ms", 1e-3), ("us", 1e-6), ("ns", 1e-9)],
            Dimension::Frequency => &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6), ("GHz", 1e9)],
            Dimension::Speed => &[("m/s", 1.0), ("mm/us", 1e3), ("km/s", 1e3)],
            Dimension::Angle => &[("rad", 1.0), ("deg", std::f64::consts::PI / 180.0)],
            Dimension::Decibel => &[("dB", 1.0)],
        }
    }

    /// Canonical unit used when writing values back out.
    pub fn si_unit(self) -> &'static str {
        self.units()[0].0
    }
}

/// Parses `"<number> <unit>"` into an SI value of the given dimension.
pub fn parse_quantity(field: &str, text: &str, dim: Dimension) -> Result<f64> {
    let text = text.trim();
    let split = text
        .find(|c: char| c.is_whitespace())
        .ok_or_else(|| Error::config(field, format!("`{text}` is missing a unit (expected one of {})", unit_list(dim))))?;
    let (num, unit) = text.split_at(split);
    let unit = unit.trim();
    let value: f64 = num
        .parse()
        .map_err(|_| Error::config(field, format!("`{num}` is not a number")))?;
    if !value.is_finite() {
        return Err(Error::config(field, "value must be finite"));
    }
    let scale = dim
        .units()
        .iter()
        .find(|(u, _)| *u == unit)
        .map(|(_, s)| *s)
        .ok_or_else(|| Error::config(field, format!("unknown unit `{unit}` (expected one of {})", unit_list(dim))))?;
    Ok(value * scale)
}

fn unit_list(dim: Dimension) -> String {
    dim.units()
        .iter()
        .map(|(u, _)| *u)
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn format_quantity(value: f64, dim: Dimension) -> String {
    format!("{value:e} {}", dim.si_unit())
}
