#![allow(dead_code)]

use std::path::PathBuf;

use fdbf::config::Setup;
use fdbf::freq_bf::{band_select, Band};
use fdbf::pulse::{sample_pulse, PulseModel, SampledPulse};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// The reduced 8-element, 512-sample setup.
pub fn ci_setup() -> Setup {
    Setup::load(config_path("ci.conf")).expect("ci.conf parses")
}

/// Four elements and a short window, for properties that build kernels
/// on every case.
pub fn tiny_setup() -> Setup {
    Setup::parse(
        "elements = 4\nreference_element = 2\ndepth = 1 cm\ndirections = 3\nsector_min = -20 deg\nsector_max = 20 deg\n\
         line_start = 0.1 cm\nline_taper = 2 us\nkernel_epsilon = 1e-3",
    )
    .unwrap()
}

pub fn pulse_and_band(setup: &Setup) -> (SampledPulse, Band) {
    let grid = setup.grid().unwrap();
    let pulse = sample_pulse(&PulseModel::from_config(&setup.imaging), &grid);
    let band = band_select(&pulse, setup.processing.band_threshold()).unwrap();
    (pulse, band)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}
