//! Frequency-domain beamforming for phased-array ultrasound.
//!
//! The crate computes beamformed lines directly from a small band of DFT
//! coefficients of the element signals, reconstructs lines from sub-band
//! subsets with sparse recovery, and carries the reference pieces needed
//! to check all of that: a point-scatterer channel simulator, a
//! delay-and-sum beamformer in the time domain, and a B-mode renderer.
//!
//! ```no_run
//! use fdbf::{config::Setup, freq_bf, kernel, phantom, pulse, time_bf};
//!
//! let setup = Setup::cardiac();
//! let grid = setup.grid()?;
//! let pulse = pulse::sample_pulse(&pulse::PulseModel::from_config(&setup.imaging), &grid);
//! let band = freq_bf::band_select(&pulse, setup.processing.band_threshold())?;
//! let theta = 0.0;
//! let table = kernel::build_kernel_table(&setup, theta, &band.indices(), setup.processing.kernel_epsilon)?;
//! let ph = phantom::Phantom::from_delays(&[60e-6, 120e-6], &[1.0, -0.5]);
//! let frame = phantom::simulate_channels(&ph, &setup, theta)?;
//! let spectra = freq_bf::channel_dft(&frame, &table.nu())?;
//! let beam = freq_bf::beamform_freq(&spectra, &table)?;
//! let line = freq_bf::synthesize_line(&beam)?;
//! let oracle = time_bf::beamform_time(&frame, &setup)?;
//! # let _ = (line, oracle);
//! # Ok::<(), fdbf::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cs;
pub mod dft;
pub mod error;
pub mod experiment;
pub mod freq_bf;
pub mod image;
pub mod kernel;
pub mod metrics;
pub mod phantom;
pub mod pulse;
pub mod time_bf;
pub mod units;

pub use error::{Error, Result};
