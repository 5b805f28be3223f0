//! `fdbf`: simulate channel data, beamform it in time or frequency,
//! recover lines from sub-band samples and render B-mode images.
//!
//! Exit status is 0 on success, 2 for invalid input and 3 for numerical
//! failures. I/O errors exit with 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fdbf::config::Setup;
use fdbf::cs::{self, AdmmParams, MuStrategy, OmpParams};
use fdbf::experiment::{self, ExperimentError, ExperimentSpec};
use fdbf::freq_bf::{self, Band};
use fdbf::kernel::{self, KernelStats, QKernelTable};
use fdbf::phantom::{self, ChannelFrame, PhantomSpec};
use fdbf::pulse::{sample_pulse, PulseModel, SampledPulse};
use fdbf::time_bf::{self, BeamformedLine};
use fdbf::{image, metrics};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fdbf", version, about = "Frequency-domain ultrasound beamforming")]
struct Cli {
    /// Setup file (defaults to the built-in cardiac setup).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one setup key, e.g. `--set "directions = 16"`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Worker threads for per-direction and per-element fan-out.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print the derived sampling grid and pulse band before running.
    #[arg(long, global = true)]
    print_grid: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate element signals for a phantom.
    Simulate(SimulateArgs),
    /// Build or inspect frequency-domain kernel tables.
    Kernel {
        #[command(subcommand)]
        action: KernelAction,
    },
    /// Beamform one channel frame.
    Beamform(BeamformArgs),
    /// Recover a line from a sub-band of the beamformed spectrum.
    Recover(RecoverArgs),
    /// Render lines into a B-mode image.
    Render(RenderArgs),
    /// Run an experiment file end to end.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Phantom description; without it a seeded default phantom is used.
    #[arg(long)]
    phantom: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulate only this direction index and write a single file.
    #[arg(long)]
    direction: Option<usize>,
    /// Output file (with --direction) or directory.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum KernelAction {
    /// Build the tables for every direction into a cache directory.
    Build {
        #[arg(long)]
        cache: PathBuf,
        /// Also report |ν(μ)| for this many central measurements.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Print the sample budget of every direction as CSV.
    Stats {
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        m: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BeamMethod {
    Time,
    Freq,
}

#[derive(Args)]
struct BeamformArgs {
    #[arg(long, value_enum)]
    method: BeamMethod,
    /// Channel frame file.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Write the direction's sample budget as CSV (frequency method only).
    #[arg(long)]
    budget_report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RecoveryMethod {
    Omp,
    L1,
}

#[derive(Clone, Copy, ValueEnum)]
enum MuArg {
    Central,
    Uniform,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long, value_enum)]
    method: RecoveryMethod,
    #[arg(long, value_enum, default_value = "central")]
    mu: MuArg,
    /// Number of measured coefficients.
    #[arg(long, default_value_t = 100)]
    m: usize,
    /// Maximum number of atoms for OMP.
    #[arg(long = "L", default_value_t = 25)]
    max_atoms: usize,
    /// ℓ1 constraint radius (default 0).
    #[arg(long)]
    eps: Option<f64>,
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Line files, or one directory of them. Lines are ordered by angle.
    #[arg(required = true)]
    lines: Vec<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    dr: f64,
    #[arg(long, default_value = "512x512")]
    size: String,
    /// `.pgm` or `.png`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    spec: PathBuf,
    /// Overrides the output directory named in the spec.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let inner = e
        .downcast_ref::<fdbf::Error>()
        .or_else(|| e.downcast_ref::<ExperimentError>().map(|x| &x.source));
    match inner {
        Some(fdbf::Error::Numerical(_)) => 3,
        Some(fdbf::Error::Io(_)) => 1,
        Some(_) => 2,
        None if e.downcast_ref::<std::io::Error>().is_some() => 1,
        None => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(fdbf::Error::config("threads", "must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("cannot configure the thread pool: {e}"))?;
    }
    let setup = load_setup(cli.config.as_deref(), &cli.set)?;
    if cli.print_grid {
        print_grid(&setup)?;
    }
    match cli.command {
        None if cli.print_grid => Ok(()),
        None => bail!(fdbf::Error::config("command", "no subcommand given (see --help)")),
        Some(Command::Simulate(a)) => simulate(&setup, a),
        Some(Command::Kernel { action }) => kernel_cmd(&setup, action),
        Some(Command::Beamform(a)) => beamform(&setup, a),
        Some(Command::Recover(a)) => recover(&setup, a),
        Some(Command::Render(a)) => render(&setup, a),
        Some(Command::Experiment(a)) => run_experiment(a, &cli.set),
    }
}

fn load_setup(path: Option<&Path>, set: &[String]) -> anyhow::Result<Setup> {
    let base = match path {
        Some(p) => Setup::load(p).with_context(|| format!("reading setup {}", p.display()))?,
        None => Setup::cardiac(),
    };
    Ok(base.with_overrides(set.iter().map(String::as_str))?)
}

struct Prepared {
    pulse: SampledPulse,
    band: Band,
}

fn prepare(setup: &Setup) -> anyhow::Result<Prepared> {
    let grid = setup.grid()?;
    let pulse = sample_pulse(&PulseModel::from_config(&setup.imaging), &grid);
    let band = freq_bf::band_select(&pulse, setup.processing.band_threshold())?;
    Ok(Prepared { pulse, band })
}

fn print_grid(setup: &Setup) -> anyhow::Result<()> {
    let grid = setup.grid()?;
    let p = prepare(setup)?;
    println!("T = {:.6e} s", grid.duration);
    println!("fs = {:.6e} Hz", grid.sample_rate);
    println!("N = {}", grid.samples);
    println!("kappa = {}..={} ({} bins)", p.band.lo, p.band.hi, p.band.len());
    println!("directions = {}", setup.imaging.directions.len());
    Ok(())
}

fn simulate(setup: &Setup, a: SimulateArgs) -> anyhow::Result<()> {
    let grid = setup.grid()?;
    let spec = match &a.phantom {
        Some(p) => PhantomSpec::load(p).with_context(|| format!("reading phantom {}", p.display()))?,
        None => experiment::default_phantom(setup, a.seed)?,
    };
    let c = setup.geometry.speed_of_sound();
    let one = |i: usize| -> anyhow::Result<ChannelFrame> {
        let theta = *setup
            .imaging
            .directions
            .get(i)
            .ok_or_else(|| fdbf::Error::config("direction", format!("index {i} is out of range")))?;
        let ph = spec.realize(&grid, c, i as u64)?;
        let mut frame = phantom::simulate_channels(&ph, setup, theta)?;
        if let Some(snr) = setup.processing.noise_snr_db {
            phantom::add_noise(&mut frame, snr, a.seed.wrapping_add(1 << 32).wrapping_add(i as u64));
        }
        Ok(frame)
    };
    match a.direction {
        Some(i) => one(i)?.save(&a.output)?,
        None => {
            std::fs::create_dir_all(&a.output)?;
            for i in 0..setup.imaging.directions.len() {
                one(i)?.save(a.output.join(format!("frame_{i:03}.snqb")))?;
            }
        }
    }
    Ok(())
}

fn table_for(setup: &Setup, theta: f64, bins: &[usize], cache: Option<&Path>) -> fdbf::Result<QKernelTable> {
    let eps = setup.processing.kernel_epsilon;
    match cache {
        Some(dir) => kernel::build_cached(dir, setup, theta, bins, eps),
        None => kernel::build_kernel_table(setup, theta, bins, eps),
    }
}

fn kernel_cmd(setup: &Setup, action: KernelAction) -> anyhow::Result<()> {
    let (cache, m) = match &action {
        KernelAction::Build { cache, m } => (Some(cache.as_path()), *m),
        KernelAction::Stats { cache, m } => (cache.as_deref(), *m),
    };
    let p = prepare(setup)?;
    let mu = match m {
        Some(count) => Some(cs::choose_mu(&p.band, p.pulse.peak_bin(), count, MuStrategy::Central)?),
        None => None,
    };
    let kappa = p.band.indices();
    let mut out = String::from("theta_rad,kappa,nu,ratio,N,reduction");
    if mu.is_some() {
        out.push_str(",mu,nu_mu,reduction_mu");
    }
    out.push('\n');
    for &theta in &setup.imaging.directions {
        let table = table_for(setup, theta, &kappa, cache)?;
        let s = table.stats();
        out.push_str(&format!("{theta},{},{},{},{},{}", s.kappa, s.nu, s.ratio, s.samples, s.reduction));
        if let Some(mu) = &mu {
            let nu_mu = table.nu_for(mu)?.len();
            let r = KernelStats::new(s.samples, mu.len(), nu_mu);
            out.push_str(&format!(",{},{},{}", mu.len(), nu_mu, r.reduction));
        }
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn load_frame(setup: &Setup, path: &Path) -> anyhow::Result<ChannelFrame> {
    let frame = ChannelFrame::load(path).with_context(|| format!("reading frame {}", path.display()))?;
    frame.check_against(setup)?;
    Ok(frame)
}

fn beamform(setup: &Setup, a: BeamformArgs) -> anyhow::Result<()> {
    let frame = load_frame(setup, &a.input)?;
    let line = match a.method {
        BeamMethod::Time => {
            if a.budget_report.is_some() {
                bail!(fdbf::Error::config("budget-report", "only the frequency method has a sample budget"));
            }
            time_bf::beamform_time(&frame, setup)?
        }
        BeamMethod::Freq => {
            let p = prepare(setup)?;
            let table = table_for(setup, frame.theta, &p.band.indices(), a.cache.as_deref())?;
            let spectra = freq_bf::channel_dft(&frame, &table.nu())?;
            let beam = freq_bf::beamform_freq(&spectra, &table)?;
            if let Some(path) = &a.budget_report {
                std::fs::write(path, freq_bf::budget_csv(&[(frame.theta, table.stats())]))?;
            }
            freq_bf::synthesize_line(&beam)?
        }
    };
    line.save(&a.output)?;
    Ok(())
}

#[derive(Serialize)]
struct RecoverReport {
    method: &'static str,
    theta: f64,
    mu: usize,
    nu_mu: usize,
    samples: usize,
    reduction: f64,
    iterations: usize,
    residual: f64,
    epsilon: Option<f64>,
    atoms: Option<usize>,
    converged: Option<bool>,
    envelope_nrmse: f64,
}

fn recover(setup: &Setup, a: RecoverArgs) -> anyhow::Result<()> {
    let frame = load_frame(setup, &a.input)?;
    let p = prepare(setup)?;
    let strategy = match a.mu {
        MuArg::Central => MuStrategy::Central,
        MuArg::Uniform => MuStrategy::Uniform,
    };
    let mu = cs::choose_mu(&p.band, p.pulse.peak_bin(), a.m, strategy)?;
    let table = table_for(setup, frame.theta, &mu, a.cache.as_deref())?;
    let needed = table.nu();
    let spectra = freq_bf::channel_dft(&frame, &needed)?;
    let beam = freq_bf::beamform_freq(&spectra, &table)?;
    let meas = cs::build_measurement(&beam, &p.pulse, &mu)?;
    let (line, report) = match a.method {
        RecoveryMethod::Omp => {
            let sol = cs::recover_omp(&meas, &OmpParams::new(a.max_atoms))?;
            let line = cs::sparse_line(&sol.support, &sol.amplitudes, &p.pulse, &p.band, frame.theta, frame.sample_rate)?;
            (line, ("omp", sol.iterations, sol.residual_norm, None, Some(sol.support.len()), None))
        }
        RecoveryMethod::L1 => {
            let eps = a.eps.unwrap_or(0.0);
            let sol = cs::recover_analysis_l1(&meas, &p.band, eps, &AdmmParams::default())?;
            let line = cs::normalized_line(&sol.coeffs, &p.pulse, &p.band, frame.theta, frame.sample_rate)?;
            (line, ("l1", sol.iterations, sol.residual, Some(eps), None, Some(sol.converged)))
        }
    };
    // channel data is at hand, so the time-domain line is the reference
    let oracle = time_bf::beamform_time(&frame, setup)?;
    let (method, iterations, residual, epsilon, atoms, converged) = report;
    let report = RecoverReport {
        method,
        theta: frame.theta,
        mu: mu.len(),
        nu_mu: needed.len(),
        samples: frame.len,
        reduction: frame.len as f64 / needed.len() as f64,
        iterations,
        residual,
        epsilon,
        atoms,
        converged,
        envelope_nrmse: metrics::envelope_nrmse(&line.samples, &oracle.samples),
    };
    line.save(&a.output)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.report {
        Some(path) => std::fs::write(path, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn line_files(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    if let [dir] = inputs {
        if dir.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "snqb"))
                .collect();
            files.sort();
            return Ok(files);
        }
    }
    Ok(inputs.to_vec())
}

fn render(setup: &Setup, a: RenderArgs) -> anyhow::Result<()> {
    let (w, h) = image::parse_size(&a.size)?;
    let mut lines = line_files(&a.lines)?
        .iter()
        .map(|p| BeamformedLine::load(p).with_context(|| format!("reading line {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    lines.sort_by(|x, y| x.theta.total_cmp(&y.theta));
    // the sector follows the lines actually given
    let mut setup = setup.clone();
    setup.imaging.directions = lines.iter().map(|l| l.theta).collect();
    setup.imaging.validate()?;
    let img = image::render(&lines, &setup, w, h, a.dr)?;
    match a.output.extension().and_then(|e| e.to_str()) {
        Some("png") => img.write_png(&a.output)?,
        Some("pgm") | None => img.write_pgm(&a.output)?,
        Some(other) => bail!(fdbf::Error::config("output", format!("unknown image format `.{other}`"))),
    }
    Ok(())
}

fn run_experiment(a: ExperimentArgs, set: &[String]) -> anyhow::Result<()> {
    let mut spec = ExperimentSpec::load(&a.spec).with_context(|| format!("reading experiment {}", a.spec.display()))?;
    spec.setup = spec.setup.with_overrides(set.iter().map(String::as_str))?;
    if let Some(out) = a.output {
        spec.output = out;
    }
    let report = experiment::run_experiment(&spec)?;
    let b = &report.budgets;
    println!("N = {}, |kappa| = {}", b.samples, b.kappa);
    if let (Some(nu), Some(r)) = (b.nu, b.reduction_freq) {
        println!("|nu| = {nu}, reduction {r:.2}");
    }
    if let (Some(mu), Some(nu_mu), Some(r)) = (b.mu, b.nu_mu, b.reduction_cs) {
        println!("|mu| = {mu}, |nu(mu)| = {nu_mu}, reduction {r:.2}");
    }
    for (m, s) in &report.summary {
        if let Some(e) = s.mean_envelope_nrmse {
            println!("{m}: mean envelope NRMSE {e:.4}");
        }
    }
    println!("report written to {}", spec.output.join("report.json").display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        let numerical = anyhow::Error::from(fdbf::Error::Numerical("singular".into()));
        assert_eq!(exit_code(&numerical), 3);
        assert_eq!(exit_code(&fdbf::Error::config("m", "bad").into()), 2);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&anyhow::Error::from(io).context("reading")), 1);
        let staged = ExperimentError {
            stage: "omp".into(),
            source: fdbf::Error::Numerical("diverged".into()),
        };
        assert_eq!(exit_code(&staged.into()), 3);
        assert_eq!(exit_code(&anyhow!("other")), 2);
    }
}
