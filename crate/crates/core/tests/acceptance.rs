//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! fails. Paper-scale kernel tables are cached under the cargo target
//! directory, so only the first run pays for building them; the cold
//! build time is printed whenever it happens.

mod common;

use std::time::Instant;

use fdbf::config::Setup;
use fdbf::cs::{self, AdmmParams, MuStrategy, OmpParams};
use fdbf::dft::naive_dft;
use fdbf::experiment::{default_phantom, run_experiment, ExperimentSpec, ImageOptions, Method};
use fdbf::freq_bf::{self, BeamSpectrum};
use fdbf::image::envelope;
use fdbf::kernel::{build_cached, build_kernel_table, eval_q};
use fdbf::metrics::{envelope_nrmse, peak_near};
use fdbf::phantom::{simulate_channels, ChannelFrame, Position};
use fdbf::pulse::PulseModel;
use fdbf::time_bf::{beamform_time, delay_map};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{ci_setup, config_path, pulse_and_band, rel_err, tiny_setup};

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: &'static str, pass: bool, detail: String) -> Outcome {
    println!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, pass, detail }
}

fn paper() -> Setup {
    Setup::load(config_path("paper.conf")).unwrap()
}

fn c2_band() -> Outcome {
    let setup = paper();
    let (pulse, band) = pulse_and_band(&setup);
    let n = pulse.len();
    let k = band.len();
    let pass = (320..=400).contains(&k) && 8 * k <= n;
    report(
        "C2 band arithmetic",
        pass,
        format!("|kappa| = {k} (bins {}..={}) in [320, 400], |kappa|/N = {k}/{n} = {:.4} <= 0.125", band.lo, band.hi, k as f64 / n as f64),
    )
}

fn c8_oracles() -> Outcome {
    let setup = ci_setup();
    let grid = setup.grid().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut frame = ChannelFrame::zeros(setup.geometry.element_count(), grid.samples, 0.0, grid.sample_rate);
    frame.samples.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let all: Vec<usize> = (0..grid.samples).collect();
    let fast = freq_bf::channel_dft(&frame, &all).unwrap();
    let mut dft_err: f64 = 0.0;
    for m in 0..frame.elements {
        let slow = naive_dft(frame.row(m), &all);
        let e: f64 = fast.row(m).iter().zip(&slow).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let s: f64 = slow.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        dft_err = dft_err.max(e / s);
    }

    let start = Instant::now();
    let (_, band) = pulse_and_band(&setup);
    let bins = band.indices();
    let spec = default_phantom(&setup, 4).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &theta) in setup.imaging.directions.iter().enumerate() {
        let ph = spec.realize(&grid, setup.geometry.speed_of_sound(), i as u64).unwrap();
        let frame = simulate_channels(&ph, &setup, theta).unwrap();
        let table = build_kernel_table(&setup, theta, &bins, setup.processing.kernel_epsilon).unwrap();
        let spectra = freq_bf::channel_dft(&frame, &table.nu()).unwrap();
        let beam = freq_bf::beamform_freq(&spectra, &table).unwrap();
        let oracle = BeamSpectrum::of_line(&beamform_time(&frame, &setup).unwrap(), &bins);
        let num: f64 = beam.coeffs.iter().zip(&oracle.coeffs).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = oracle.coeffs.iter().map(|b| b.norm_sqr()).sum();
        worst = worst.max((num / den).sqrt());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = dft_err <= 1e-9 && worst <= 0.02 && secs < 1.0;
    report(
        "C8 oracle cross-checks",
        pass,
        format!(
            "channel_dft vs O(N^2) DFT {dft_err:.1e} <= 1e-9 (N = {}); freq vs DFT(time) on kappa max {:.2}% <= 2% over {} directions (M = {}, eps_Q = {:e}) in {secs:.2} s < 1 s",
            grid.samples,
            100.0 * worst,
            setup.imaging.directions.len(),
            setup.geometry.element_count(),
            setup.processing.kernel_epsilon
        ),
    )
}

fn c7_properties() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    // linearity of both beamformers
    let setup = ci_setup();
    let grid = setup.grid().unwrap();
    let theta = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random_frame = || {
        let mut f = ChannelFrame::zeros(setup.geometry.element_count(), grid.samples, theta, grid.sample_rate);
        f.samples.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        f
    };
    let (a, b) = (random_frame(), random_frame());
    let alpha = -1.7;
    let mix = a.axpy(alpha, &b).unwrap();
    let lt = |f: &ChannelFrame| beamform_time(f, &setup).unwrap().samples;
    let want: Vec<f64> = lt(&a).iter().zip(lt(&b)).map(|(x, y)| alpha * x + y).collect();
    check("time linearity", rel_err(&lt(&mix), &want) <= 1e-10);
    let (_, band) = pulse_and_band(&setup);
    let table = build_kernel_table(&setup, theta, &band.indices(), 1e-3).unwrap();
    let lf = |f: &ChannelFrame| {
        let s = freq_bf::channel_dft(f, &table.nu()).unwrap();
        freq_bf::beamform_freq(&s, &table).unwrap().coeffs
    };
    let (ca, cb, cm) = (lf(&a), lf(&b), lf(&mix));
    let scale: f64 = cm.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let err: f64 = ca.iter().zip(&cb).zip(&cm).map(|((x, y), z)| (alpha * x + y - z).norm_sqr()).sum::<f64>().sqrt();
    check("freq linearity", err <= 1e-10 * scale);

    // τ-map identity and reference-element kernel
    check(
        "tau identity",
        (0..200).all(|i| {
            let t = i as f64 * 1e-6;
            delay_map(t, 0.4, 0.0) == t
        }),
    );
    let plain = setup.with_overrides(["line_start = 0 m", "line_taper = 0 s"]).unwrap();
    let r = plain.geometry.reference_index();
    check(
        "Q reference identity",
        (0..grid.samples).step_by(7).all(|n| {
            eval_q(&plain, r, 0.6, 97, grid.time(n)).unwrap() == Complex64::new(1.0, 0.0)
        }),
    );

    // analysis fixed point with μ = κ, ε = 0 at paper scale
    let ps = paper();
    let (pulse, pband) = pulse_and_band(&ps);
    let n = pulse.len();
    let bins = pband.indices();
    let coeffs: Vec<Complex64> = bins
        .iter()
        .map(|&k| {
            pulse.spectrum[k]
                * [(400usize, 1.0), (1700, -0.6), (2900, 0.3)]
                    .iter()
                    .map(|&(q, b)| Complex64::from_polar(b, -2.0 * std::f64::consts::PI * ((k * q) % n) as f64 / n as f64))
                    .sum::<Complex64>()
        })
        .collect();
    let spec = BeamSpectrum { bins: bins.clone(), coeffs, samples: n, theta: 0.0, sample_rate: 16e6 };
    let meas = cs::build_measurement(&spec, &pulse, &bins).unwrap();
    let sol = cs::recover_analysis_l1(&meas, &pband, 0.0, &AdmmParams::default()).unwrap();
    let dev = sol.coeffs.iter().zip(&meas.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    check("analysis fixed point", dev <= 1e-8);

    // OMP residual trace
    let mu = cs::choose_mu(&pband, pulse.peak_bin(), 100, MuStrategy::Central).unwrap();
    let meas = cs::build_measurement(&spec, &pulse, &mu).unwrap();
    let sol = cs::recover_omp(&meas, &OmpParams::new(10)).unwrap();
    check("OMP residual monotone", sol.residual_trace.windows(2).all(|w| w[1] <= w[0]));

    // byte-identical reruns
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut reports = Vec::new();
    for d in &dirs {
        let mut spec = ExperimentSpec::new(tiny_setup(), &[Method::Time, Method::Freq, Method::L1], d.path());
        spec.recovery.measurements = 12;
        spec.image = ImageOptions { width: 32, height: 24, dynamic_range_db: 60.0 };
        run_experiment(&spec).unwrap();
        let read = |f: &str| std::fs::read(d.path().join(f)).unwrap();
        reports.push((read("MANIFEST"), read("report.json"), read("images/freq.pgm")));
    }
    check("byte-identical reruns", reports[0] == reports[1]);

    let pass = failures.is_empty();
    report(
        "C7 property checks",
        pass,
        if pass {
            "linearity (time, freq) <= 1e-10, tau(gamma=0) = t, Q_ref = 1, analysis fixed point <= 1e-8, OMP residual monotone, reruns byte-identical (full suites: tests/properties.rs)".into()
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

fn c5_omp() -> Outcome {
    let setup = paper();
    let (pulse, band) = pulse_and_band(&setup);
    let n = pulse.len();
    let plen = PulseModel::from_config(&setup.imaging).length_samples(setup.imaging.sample_rate);
    let mu = cs::choose_mu(&band, pulse.peak_bin(), 100, MuStrategy::Central).unwrap();
    let bins = band.indices();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = Instant::now();
    let mut exact = 0;
    let mut worst_amp: f64 = 0.0;
    for trial in 0..50 {
        let l = trial % 5 + 1;
        let mut delays: Vec<usize> = Vec::new();
        while delays.len() < l {
            let q = rng.gen_range(plen..n - plen);
            if delays.iter().all(|&d| d.abs_diff(q) > plen) {
                delays.push(q);
            }
        }
        delays.sort_unstable();
        let amps: Vec<f64> = (0..l).map(|_| rng.gen_range(0.5..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let coeffs = bins
            .iter()
            .map(|&k| {
                pulse.spectrum[k]
                    * delays
                        .iter()
                        .zip(&amps)
                        .map(|(&q, &b)| Complex64::from_polar(b, -2.0 * std::f64::consts::PI * ((k * q) % n) as f64 / n as f64))
                        .sum::<Complex64>()
            })
            .collect();
        let spec = BeamSpectrum { bins: bins.clone(), coeffs, samples: n, theta: 0.0, sample_rate: 16e6 };
        let meas = cs::build_measurement(&spec, &pulse, &mu).unwrap();
        let sol = cs::recover_omp(&meas, &OmpParams::new(l)).unwrap();
        if sol.support == delays {
            exact += 1;
            for (a, &b) in sol.amplitudes.iter().zip(&amps) {
                worst_amp = worst_amp.max((a - b).norm() / b.abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = exact == 50 && worst_amp < 1e-6 && secs < 10.0;
    report(
        "C5 OMP exact recovery",
        pass,
        format!("{exact}/50 supports exact (L = 1..5, separation > {plen} samples, |mu| = 100), max amplitude error {worst_amp:.1e} < 1e-6, {secs:.2} s < 10 s"),
    )
}

fn c6_analysis_vs_omp() -> Outcome {
    let setup = paper();
    let grid = setup.grid().unwrap();
    let (pulse, band) = pulse_and_band(&setup);
    let mu = cs::choose_mu(&band, pulse.peak_bin(), 100, MuStrategy::Central).unwrap();
    let theta = 0.0;
    let table = build_kernel_table(&setup, theta, &mu, setup.processing.kernel_epsilon).unwrap();
    let needed = table.nu();
    let mut wins = 0;
    let mut pairs = Vec::new();
    for s in 0..20u64 {
        let ph = default_phantom(&setup, 600 + s).unwrap().realize(&grid, setup.geometry.speed_of_sound(), 0).unwrap();
        let frame = simulate_channels(&ph, &setup, theta).unwrap();
        let oracle = beamform_time(&frame, &setup).unwrap();
        let spectra = freq_bf::channel_dft(&frame, &needed).unwrap();
        let beam = freq_bf::beamform_freq(&spectra, &table).unwrap();
        let meas = cs::build_measurement(&beam, &pulse, &mu).unwrap();
        let omp = cs::recover_omp(&meas, &OmpParams::new(25)).unwrap();
        let omp_line = cs::sparse_line(&omp.support, &omp.amplitudes, &pulse, &band, theta, grid.sample_rate).unwrap();
        let l1 = cs::recover_analysis_l1(&meas, &band, 0.0, &AdmmParams::default()).unwrap();
        let l1_line = cs::normalized_line(&l1.coeffs, &pulse, &band, theta, grid.sample_rate).unwrap();
        let (eo, ea) = (
            envelope_nrmse(&omp_line.samples, &oracle.samples),
            envelope_nrmse(&l1_line.samples, &oracle.samples),
        );
        wins += (ea < eo) as usize;
        pairs.push((ea, eo));
    }
    let mean = |f: fn(&(f64, f64)) -> f64| pairs.iter().map(f).sum::<f64>() / pairs.len() as f64;
    report(
        "C6 analysis beats synthesis on speckle",
        wins >= 18,
        format!(
            "analysis l1 envelope NRMSE below OMP(L = 25) in {wins}/20 >= 18 speckle phantoms (mean {:.3} vs {:.3}, |mu| = 100, reference: time-domain line)",
            mean(|p| p.0),
            mean(|p| p.1)
        ),
    )
}

/// Criteria 1, 3 and 4 share the paper-scale kernel tables.
fn paper_scale() -> Vec<Outcome> {
    let setup = paper();
    let grid = setup.grid().unwrap();
    let fs = grid.sample_rate;
    let (pulse, band) = pulse_and_band(&setup);
    let n = pulse.len();
    let kappa = band.indices();
    let mu = cs::choose_mu(&band, pulse.peak_bin(), 100, MuStrategy::Central).unwrap();
    let cache = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("kernels-paper");
    let spec = default_phantom(&setup, 1).unwrap();
    let c = setup.geometry.speed_of_sound();
    let half = PulseModel::from_config(&setup.imaging).length_samples(fs);

    let mut precompute = 0.0;
    let mut pipeline = 0.0;
    let mut worst_nrmse: f64 = 0.0;
    let mut worst_peak = 0usize;
    let mut compared = 0usize;
    let mut ambiguous = 0usize;
    let mut nus = Vec::new();
    let mut nu_mus = Vec::new();
    for (i, &theta) in setup.imaging.directions.iter().enumerate() {
        let t0 = Instant::now();
        let table = build_cached(&cache, &setup, theta, &kappa, setup.processing.kernel_epsilon).unwrap();
        precompute += t0.elapsed().as_secs_f64();
        nus.push(table.nu().len());
        nu_mus.push(table.nu_for(&mu).unwrap().len());

        let t1 = Instant::now();
        let ph = spec.realize(&grid, c, i as u64).unwrap();
        let frame = simulate_channels(&ph, &setup, theta).unwrap();
        let spectra = freq_bf::channel_dft(&frame, &table.nu()).unwrap();
        let beam = freq_bf::beamform_freq(&spectra, &table).unwrap();
        let line = freq_bf::synthesize_line(&beam).unwrap();
        pipeline += t1.elapsed().as_secs_f64();

        let oracle = beamform_time(&frame, &setup).unwrap();
        worst_nrmse = worst_nrmse.max(envelope_nrmse(&line.samples, &oracle.samples));
        let (ef, et) = (envelope(&line.samples), envelope(&oracle.samples));
        // the ten strong reflectors come first in the phantom; peaks are
        // compared for those with no other strong reflector nearby
        let strong: Vec<(f64, f64)> = ph
            .scatterers
            .iter()
            .take(10)
            .filter_map(|s| match s.position {
                Position::OnAxis { delay } => Some((delay * fs, s.amplitude.abs())),
                Position::Point { .. } => None,
            })
            .collect();
        for &(d, amp) in &strong {
            if strong.iter().any(|&(o, _)| o != d && (o - d).abs() < 2.0 * half as f64) {
                continue;
            }
            let center = d.round() as usize;
            let (pf, pt) = (peak_near(&ef, center, half / 2), peak_near(&et, center, half / 2));
            // speckle can cancel a reflector or split its envelope into two
            // near-equal lobes; the position is only defined when one lobe
            // dominates (the beamformer gain is 1)
            let (lo, hi) = (center.saturating_sub(half / 2), (center + half / 2).min(n - 1));
            let rival = (lo..=hi).filter(|&j| j.abs_diff(pt) > half / 4).map(|j| et[j]).fold(0.0, f64::max);
            if rival >= 0.9 * et[pt] || et[pt] < 0.5 * amp {
                ambiguous += 1;
                continue;
            }
            worst_peak = worst_peak.max(pf.abs_diff(pt));
            compared += 1;
        }
    }
    // one uncached build, to state the cold precompute cost on every run
    let t2 = Instant::now();
    build_kernel_table(&setup, setup.imaging.directions[0], &kappa, setup.processing.kernel_epsilon).unwrap();
    let cold = t2.elapsed().as_secs_f64();
    let cores = rayon::current_num_threads();
    let dirs = setup.imaging.directions.len();
    let c1 = report(
        "C1 time/frequency equivalence",
        worst_nrmse <= 0.1 && worst_peak <= 1 && pipeline < 60.0,
        format!(
            "max envelope NRMSE {worst_nrmse:.4} <= 0.1 over {dirs} directions (M = 64, N = {n}); \
             max peak offset {worst_peak} <= 1 sample over {compared} isolated reflectors with a dominant envelope peak ({ambiguous} cancelled or split by speckle skipped); \
             pipeline {pipeline:.1} s < 60 s on {cores} core(s); kernel precompute {precompute:.1} s this run \
             (cache), cold build {cold:.2} s per direction = {:.0} s for {dirs} directions on {cores} core(s)",
            cold * dirs as f64
        ),
    );
    let nu = *nus.iter().max().unwrap();
    let k = kappa.len();
    let c3 = report(
        "C3 kernel budget",
        nu as f64 <= 1.33 * k as f64 && n as f64 / nu as f64 >= 6.5,
        format!(
            "eps_Q = {:e}: max |nu| = {nu} (min {}) <= 1.33 |kappa| = {:.1}, ratio {:.3}; reduction N/|nu| = {:.2} >= 6.5",
            setup.processing.kernel_epsilon,
            nus.iter().min().unwrap(),
            1.33 * k as f64,
            nu as f64 / k as f64,
            n as f64 / nu as f64
        ),
    );
    let nu_mu = *nu_mus.iter().max().unwrap();
    let c4 = report(
        "C4 25-fold pipeline",
        nu_mu <= 133 && n as f64 / nu_mu as f64 >= 24.0,
        format!(
            "|mu| = 100 central: max |nu(mu)| = {nu_mu} (min {}) <= 133; reduction N/|nu(mu)| = {:.2} >= 24",
            nu_mus.iter().min().unwrap(),
            n as f64 / nu_mu as f64
        ),
    );
    vec![c1, c3, c4]
}

fn main() {
    println!("acceptance criteria");
    let mut outcomes = vec![c2_band(), c8_oracles(), c7_properties(), c5_omp(), c6_analysis_vs_omp()];
    outcomes.extend(paper_scale());
    outcomes.sort_by_key(|o| o.id);
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    println!("\nsummary: {}/{} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    for o in &failed {
        println!("  failed {}: {}", o.id, o.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
