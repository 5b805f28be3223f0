//! End-to-end experiments: simulate a phantom along every direction, run
//! the requested beamformers and recoveries, render images and write a
//! JSON report of sample budgets and errors against the time-domain
//! reference.
//!
//! An experiment file looks like
//!
//! ```toml
//! config = "paper.conf"      # optional, defaults to the cardiac setup
//! set = ["directions = 16"]  # optional config overrides
//! phantom = "heart.toml"     # optional; without it a seeded default is used
//! seed = 7
//! methods = ["time", "freq", "omp", "l1"]
//! output = "out"
//! kernel_cache = "kernels"   # optional
//!
//! [recovery]
//! m = 100
//! mu = "central"
//! max_atoms = 25
//! # eps = 0.0              # defaults to 0, or the noise level when set
//!
//! [image]
//! size = "512x512"
//! dynamic_range = 60
//! ```
//!
//! Relative paths are resolved against the experiment file's directory.
//! Reports carry no timings, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Setup;
use crate::cs::{self, AdmmParams, MuStrategy, OmpParams};
use crate::error::{Error, Result};
use crate::freq_bf::{self, Band};
use crate::image::{self, BModeImage};
use crate::kernel::{self, KernelStats, QKernelTable};
use crate::metrics;
use crate::phantom::{self, PhantomSpec, SpeckleSpec};
use crate::pulse::{sample_pulse, PulseModel, SampledPulse};
use crate::time_bf::{self, BeamformedLine};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Time,
    Freq,
    Omp,
    L1,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Time => "time",
            Method::Freq => "freq",
            Method::Omp => "omp",
            Method::L1 => "l1",
        }
    }

    fn is_recovery(self) -> bool {
        matches!(self, Method::Omp | Method::L1)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(Method::Time),
            "freq" => Ok(Method::Freq),
            "omp" => Ok(Method::Omp),
            "l1" => Ok(Method::L1),
            other => Err(Error::config("methods", format!("unknown method `{other}` (expected time, freq, omp or l1)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Per-line envelope NRMSE against the time-domain line.
    EnvelopeNrmse,
    /// Gray-level NRMSE of the rendered image against the time-domain image.
    ImageNrmse,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "envelope_nrmse" => Ok(Metric::EnvelopeNrmse),
            "image_nrmse" => Ok(Metric::ImageNrmse),
            other => Err(Error::config("metrics", format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomSource {
    File(PhantomSpec),
    /// Ten strong on-axis reflectors plus speckle, drawn from the seed.
    Seeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryOptions {
    pub measurements: usize,
    pub strategy: MuStrategy,
    pub max_atoms: usize,
    /// ℓ1 constraint radius; `None` picks 0, or the channel noise level
    /// when noise is configured.
    pub epsilon: Option<f64>,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            measurements: 100,
            strategy: MuStrategy::Central,
            max_atoms: 25,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageOptions {
    pub width: usize,
    pub height: usize,
    pub dynamic_range_db: f64,
}

impl Default for ImageOptions {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            dynamic_range_db: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub setup: Setup,
    pub phantom: PhantomSource,
    pub seed: u64,
    /// Deduplicated, in canonical order.
    pub methods: Vec<Method>,
    pub output: PathBuf,
    pub kernel_cache: Option<PathBuf>,
    pub recovery: RecoveryOptions,
    pub image: ImageOptions,
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecoverySection {
    m: Option<usize>,
    mu: Option<String>,
    max_atoms: Option<usize>,
    eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageSection {
    size: Option<String>,
    dynamic_range: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    config: Option<PathBuf>,
    #[serde(default)]
    set: Vec<String>,
    phantom: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
    methods: Vec<String>,
    output: PathBuf,
    kernel_cache: Option<PathBuf>,
    #[serde(default)]
    recovery: RecoverySection,
    #[serde(default)]
    image: ImageSection,
    metrics: Option<Vec<String>>,
}

fn read_referenced(field: &str, path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::config(field, format!("cannot read {}: {e}", path.display())))
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses an experiment file, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let file: SpecFile = toml::from_str(text).map_err(|e| Error::format("experiment file", e.to_string()))?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let setup = match &file.config {
            Some(p) => Setup::parse(&read_referenced("config", &resolve(p))?)?,
            None => Setup::cardiac(),
        };
        let setup = setup.with_overrides(file.set.iter().map(String::as_str))?;
        let phantom = match &file.phantom {
            Some(p) => PhantomSource::File(PhantomSpec::parse(&read_referenced("phantom", &resolve(p))?)?),
            None => PhantomSource::Seeded,
        };
        let methods = file.methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>>>()?;
        let defaults = RecoveryOptions::default();
        let recovery = RecoveryOptions {
            measurements: file.recovery.m.unwrap_or(defaults.measurements),
            strategy: match &file.recovery.mu {
                Some(s) => s.parse()?,
                None => defaults.strategy,
            },
            max_atoms: file.recovery.max_atoms.unwrap_or(defaults.max_atoms),
            epsilon: file.recovery.eps,
        };
        let (width, height) = match &file.image.size {
            Some(s) => image::parse_size(s)?,
            None => (ImageOptions::default().width, ImageOptions::default().height),
        };
        let image = ImageOptions {
            width,
            height,
            dynamic_range_db: file.image.dynamic_range.unwrap_or(setup.imaging.dynamic_range_db),
        };
        let metrics = match &file.metrics {
            Some(list) => list.iter().map(|m| m.parse()).collect::<Result<Vec<Metric>>>()?,
            None => vec![Metric::EnvelopeNrmse, Metric::ImageNrmse],
        };
        let mut spec = ExperimentSpec {
            setup,
            phantom,
            seed: file.seed,
            methods,
            output: resolve(&file.output),
            kernel_cache: file.kernel_cache.as_deref().map(resolve),
            recovery,
            image,
            metrics,
        };
        spec.normalize();
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with the given methods and defaults for everything else.
    pub fn new(setup: Setup, methods: &[Method], output: impl Into<PathBuf>) -> Self {
        let mut spec = ExperimentSpec {
            image: ImageOptions {
                dynamic_range_db: setup.imaging.dynamic_range_db,
                ..Default::default()
            },
            setup,
            phantom: PhantomSource::Seeded,
            seed: 0,
            methods: methods.to_vec(),
            output: output.into(),
            kernel_cache: None,
            recovery: RecoveryOptions::default(),
            metrics: vec![Metric::EnvelopeNrmse, Metric::ImageNrmse],
        };
        spec.normalize();
        spec
    }

    fn normalize(&mut self) {
        self.methods.sort();
        self.methods.dedup();
        self.metrics.sort();
        self.metrics.dedup();
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods", "the method chain is empty"));
        }
        if self.image.width < 2 || self.image.height < 2 {
            return Err(Error::config("size", "images must be at least 2x2"));
        }
        if !(self.image.dynamic_range_db > 0.0) {
            return Err(Error::config("dynamic_range", "must be positive"));
        }
        if self.methods.iter().any(|m| m.is_recovery()) {
            if self.recovery.measurements == 0 {
                return Err(Error::config("m", "at least one measurement is required"));
            }
            if let Some(e) = self.recovery.epsilon {
                if !(e >= 0.0 && e.is_finite()) {
                    return Err(Error::config("eps", "must be a finite non-negative number"));
                }
            }
        }
        if self.methods.contains(&Method::Omp) && 2 * self.recovery.max_atoms > self.recovery.measurements {
            return Err(Error::config("max_atoms", "needs at most m/2 atoms"));
        }
        Ok(())
    }
}

/// Ten reflectors with amplitudes in ±[0.5, 1] placed where the line
/// window has full weight, plus speckle at 5 per millimetre with standard
/// deviation 0.1, all drawn from `seed`.
pub fn default_phantom(setup: &Setup, seed: u64) -> Result<PhantomSpec> {
    let window = setup.line_window()?;
    let grid = setup.grid()?;
    let (lo, hi) = if window.is_trivial() {
        (0.05 * grid.duration, 0.95 * grid.duration)
    } else {
        (window.start + window.taper, window.end - window.taper)
    };
    if !(hi > lo) {
        return Err(Error::config("line_taper", "the line window has no full-weight region"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = PhantomSpec::default();
    for _ in 0..10 {
        let delay = rng.gen_range(lo..hi);
        let amp = rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        spec.add_on_axis_delay(delay, amp);
    }
    Ok(spec.with_speckle(SpeckleSpec {
        density_per_mm: 5.0,
        amplitude_std: 0.1,
        seed,
    }))
}

/// A failed stage and what went wrong.
#[derive(Debug)]
pub struct ExperimentError {
    pub stage: String,
    pub source: Error,
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for ExperimentError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

fn at<T>(stage: impl Into<String>, r: Result<T>) -> std::result::Result<T, ExperimentError> {
    r.map_err(|source| ExperimentError {
        stage: stage.into(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Budgets {
    pub samples: usize,
    pub kappa: usize,
    /// Largest `|ν|` over the directions, when frequency beamforming ran.
    pub nu: Option<usize>,
    pub mu: Option<usize>,
    /// Largest `|ν(μ)|` over the directions, when recovery ran.
    pub nu_mu: Option<usize>,
    pub reduction_freq: Option<f64>,
    pub reduction_cs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionReport {
    pub index: usize,
    pub theta: f64,
    pub nu: Option<usize>,
    pub nu_mu: Option<usize>,
    pub envelope_nrmse: BTreeMap<Method, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub recovery: BTreeMap<Method, RecoveryReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub iterations: usize,
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atoms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub mean_envelope_nrmse: Option<f64>,
    pub max_envelope_nrmse: Option<f64>,
    pub image_nrmse: Option<f64>,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub setup: String,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub band: Band,
    pub mu_strategy: Option<String>,
    pub budgets: Budgets,
    pub summary: BTreeMap<Method, MethodSummary>,
    pub directions: Vec<DirectionReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

struct Shared {
    pulse: SampledPulse,
    band: Band,
    kappa: Vec<usize>,
    mu: Option<Vec<usize>>,
}

struct DirectionResult {
    report: DirectionReport,
    lines: BTreeMap<Method, BeamformedLine>,
    /// Time-domain line, always computed as the reference.
    oracle: BeamformedLine,
    kappa_stats: Option<KernelStats>,
}

fn build_table(spec: &ExperimentSpec, theta: f64, bins: &[usize]) -> Result<QKernelTable> {
    let eps = spec.setup.processing.kernel_epsilon;
    match &spec.kernel_cache {
        Some(dir) => kernel::build_cached(dir, &spec.setup, theta, bins, eps),
        None => kernel::build_kernel_table(&spec.setup, theta, bins, eps),
    }
}

fn run_direction(
    spec: &ExperimentSpec,
    shared: &Shared,
    phantom: &PhantomSpec,
    index: usize,
    theta: f64,
) -> std::result::Result<DirectionResult, ExperimentError> {
    let setup = &spec.setup;
    let grid = at("setup", setup.grid())?;
    let c = setup.geometry.speed_of_sound();
    let methods = &spec.methods;

    let ph = at("simulate", phantom.realize(&grid, c, index as u64))?;
    let mut frame = at("simulate", phantom::simulate_channels(&ph, setup, theta))?;
    let sigma = setup
        .processing
        .noise_snr_db
        .map(|snr| phantom::add_noise(&mut frame, snr, spec.seed.wrapping_add(1 << 32).wrapping_add(index as u64)));

    let oracle = at("time", time_bf::beamform_time(&frame, setup))?;
    let mut lines = BTreeMap::new();
    if methods.contains(&Method::Time) {
        lines.insert(Method::Time, oracle.clone());
    }

    let wants_freq = methods.contains(&Method::Freq);
    let wants_cs = methods.iter().any(|m| m.is_recovery());
    let full = if wants_freq {
        Some(at("kernel", build_table(spec, theta, &shared.kappa))?)
    } else {
        None
    };
    let mut nu = None;
    let mut kappa_stats = None;
    if let Some(table) = &full {
        let stats = table.stats();
        nu = Some(stats.nu);
        kappa_stats = Some(stats);
        let spectra = at("freq", freq_bf::channel_dft(&frame, &table.nu()))?;
        let beam = at("freq", freq_bf::beamform_freq(&spectra, table))?;
        lines.insert(Method::Freq, at("freq", freq_bf::synthesize_line(&beam))?);
    }

    let mut nu_mu = None;
    let mut recovery = BTreeMap::new();
    if wants_cs {
        let mu = shared.mu.as_ref().expect("mu chosen when recovery is requested");
        let table = match &full {
            Some(t) => at("kernel", t.restrict(mu))?,
            None => at("kernel", build_table(spec, theta, mu))?,
        };
        let needed = table.nu();
        nu_mu = Some(needed.len());
        let spectra = at("measure", freq_bf::channel_dft(&frame, &needed))?;
        let beam = at("measure", freq_bf::beamform_freq(&spectra, &table))?;
        let meas = at("measure", cs::build_measurement(&beam, &shared.pulse, mu))?;
        let epsilon = spec.recovery.epsilon.unwrap_or_else(|| match sigma {
            Some(s) => cs::channel_noise_epsilon(s, setup.geometry.element_count(), &meas),
            None => 0.0,
        });
        if methods.contains(&Method::Omp) {
            let sol = at("omp", cs::recover_omp(&meas, &OmpParams::new(spec.recovery.max_atoms)))?;
            let line = at(
                "omp",
                cs::sparse_line(&sol.support, &sol.amplitudes, &shared.pulse, &shared.band, theta, grid.sample_rate),
            )?;
            recovery.insert(
                Method::Omp,
                RecoveryReport {
                    iterations: sol.iterations,
                    residual: sol.residual_norm,
                    atoms: Some(sol.support.len()),
                    converged: None,
                    epsilon,
                },
            );
            lines.insert(Method::Omp, line);
        }
        if methods.contains(&Method::L1) {
            let sol = at(
                "l1",
                cs::recover_analysis_l1(&meas, &shared.band, epsilon, &AdmmParams::default()),
            )?;
            let line = at(
                "l1",
                cs::normalized_line(&sol.coeffs, &shared.pulse, &shared.band, theta, grid.sample_rate),
            )?;
            recovery.insert(
                Method::L1,
                RecoveryReport {
                    iterations: sol.iterations,
                    residual: sol.residual,
                    atoms: None,
                    converged: Some(sol.converged),
                    epsilon,
                },
            );
            lines.insert(Method::L1, line);
        }
    }

    let mut envelope_nrmse = BTreeMap::new();
    if spec.metrics.contains(&Metric::EnvelopeNrmse) {
        for (&m, line) in &lines {
            envelope_nrmse.insert(m, metrics::envelope_nrmse(&line.samples, &oracle.samples));
        }
    }
    Ok(DirectionResult {
        report: DirectionReport {
            index,
            theta,
            nu,
            nu_mu,
            envelope_nrmse,
            recovery,
        },
        lines,
        oracle,
        kappa_stats,
    })
}

/// Files written so far, relative to the output directory.
struct Artifacts {
    root: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.written.push(rel.to_string());
        Ok(())
    }

    fn manifest(&self, failure: Option<&ExperimentError>) -> Result<()> {
        let mut text = String::new();
        match failure {
            None => text.push_str("status complete\n"),
            Some(e) => {
                text.push_str("status incomplete\n");
                text.push_str(&format!("failed_stage {}\n", e.stage));
                text.push_str(&format!("cause {}\n", e.source.to_string().replace('\n', " ")));
            }
        }
        for rel in &self.written {
            let bytes = std::fs::read(self.root.join(rel))?;
            text.push_str(&format!("{}  {rel}\n", hex::encode(Sha256::digest(&bytes))));
        }
        std::fs::write(self.root.join("MANIFEST"), text)?;
        Ok(())
    }
}

fn line_bytes(line: &BeamformedLine) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    line.to_frame().write_to(&mut buf)?;
    Ok(buf)
}

/// Runs the experiment and writes its artifacts under `spec.output`:
/// `report.json`, `budget.csv` (when frequency beamforming ran), one
/// PGM image per method under `images/`, per-direction lines under
/// `lines/<method>/` and a `MANIFEST` with SHA-256 sums. On failure the
/// files already written stay in place and the manifest names the stage
/// that failed.
pub fn run_experiment(spec: &ExperimentSpec) -> std::result::Result<ExperimentReport, ExperimentError> {
    at("validate", spec.validate())?;
    let setup = &spec.setup;
    let grid = at("setup", setup.grid())?;
    let pulse = sample_pulse(&PulseModel::from_config(&setup.imaging), &grid);
    let band = at("band", freq_bf::band_select(&pulse, setup.processing.band_threshold()))?;
    let mu = if spec.methods.iter().any(|m| m.is_recovery()) {
        Some(at(
            "band",
            cs::choose_mu(&band, pulse.peak_bin(), spec.recovery.measurements, spec.recovery.strategy),
        )?)
    } else {
        None
    };
    let phantom = match &spec.phantom {
        PhantomSource::File(p) => p.clone(),
        PhantomSource::Seeded => at("phantom", default_phantom(setup, spec.seed))?,
    };
    let shared = Shared {
        kappa: band.indices(),
        pulse,
        band,
        mu,
    };

    at("output", std::fs::create_dir_all(&spec.output).map_err(Error::from))?;
    let mut artifacts = Artifacts {
        root: spec.output.clone(),
        written: Vec::new(),
    };
    let outcome = run_stages(spec, &shared, &phantom, &mut artifacts);
    let manifest = artifacts.manifest(outcome.as_ref().err());
    let report = outcome?;
    at("report", manifest)?;
    Ok(report)
}

fn run_stages(
    spec: &ExperimentSpec,
    shared: &Shared,
    phantom: &PhantomSpec,
    artifacts: &mut Artifacts,
) -> std::result::Result<ExperimentReport, ExperimentError> {
    let setup = &spec.setup;
    let results: Vec<_> = setup
        .imaging
        .directions
        .par_iter()
        .enumerate()
        .map(|(i, &theta)| run_direction(spec, shared, phantom, i, theta))
        .collect();

    let mut done = Vec::with_capacity(results.len());
    let mut failure = None;
    for r in results {
        match r {
            Ok(d) => done.push(d),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    for d in &done {
        for (m, line) in &d.lines {
            let bytes = at("write", line_bytes(line))?;
            at("write", artifacts.write(&format!("lines/{m}/line_{:03}.snqb", d.report.index), &bytes))?;
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }

    let mut summary = BTreeMap::new();
    let oracle_lines: Vec<BeamformedLine> = done.iter().map(|d| d.oracle.clone()).collect();
    let wants_image = spec.metrics.contains(&Metric::ImageNrmse);
    let oracle_image = if wants_image && setup.imaging.directions.len() >= 2 {
        Some(at("render", render(spec, &oracle_lines))?)
    } else {
        None
    };
    for &m in &spec.methods {
        let lines: Vec<BeamformedLine> = done.iter().map(|d| d.lines[&m].clone()).collect();
        let rel = format!("images/{m}.pgm");
        let mut image_nrmse = None;
        if setup.imaging.directions.len() >= 2 {
            let img = at("render", render(spec, &lines))?;
            at("render", artifacts.write(&rel, &img.to_pgm()))?;
            if let Some(reference) = &oracle_image {
                let a: Vec<f64> = img.pixels.iter().map(|&p| p as f64).collect();
                let b: Vec<f64> = reference.pixels.iter().map(|&p| p as f64).collect();
                image_nrmse = Some(metrics::nrmse(&a, &b));
            }
        }
        let errs: Vec<f64> = done.iter().filter_map(|d| d.report.envelope_nrmse.get(&m).copied()).collect();
        summary.insert(
            m,
            MethodSummary {
                mean_envelope_nrmse: (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64),
                max_envelope_nrmse: errs.iter().cloned().reduce(f64::max),
                image_nrmse,
                image: rel,
            },
        );
    }

    let kappa_rows: Vec<(f64, KernelStats)> = done
        .iter()
        .filter_map(|d| d.kappa_stats.map(|s| (d.report.theta, s)))
        .collect();
    if !kappa_rows.is_empty() {
        at("report", artifacts.write("budget.csv", freq_bf::budget_csv(&kappa_rows).as_bytes()))?;
    }
    let n = shared.pulse.len();
    let nu = done.iter().filter_map(|d| d.report.nu).max();
    let nu_mu = done.iter().filter_map(|d| d.report.nu_mu).max();
    let report = ExperimentReport {
        schema_version: SCHEMA_VERSION,
        setup: setup.to_text(),
        seed: spec.seed,
        methods: spec.methods.clone(),
        band: shared.band,
        mu_strategy: shared.mu.as_ref().map(|_| {
            match spec.recovery.strategy {
                MuStrategy::Central => "central",
                MuStrategy::Uniform => "uniform",
            }
            .to_string()
        }),
        budgets: Budgets {
            samples: n,
            kappa: shared.band.len(),
            nu,
            mu: shared.mu.as_ref().map(Vec::len),
            nu_mu,
            reduction_freq: nu.map(|v| n as f64 / v as f64),
            reduction_cs: nu_mu.map(|v| n as f64 / v as f64),
        },
        summary,
        directions: done.into_iter().map(|d| d.report).collect(),
    };
    at("report", artifacts.write("report.json", report.to_json().as_bytes()))?;
    Ok(report)
}

fn render(spec: &ExperimentSpec, lines: &[BeamformedLine]) -> Result<BModeImage> {
    image::render(lines, &spec.setup, spec.image.width, spec.image.height, spec.image.dynamic_range_db)
}
