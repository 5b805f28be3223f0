//! Distortion kernels that map element spectra to beamformed-line
//! spectra.
//!
//! Reading element `m` at `u = τ_m(t; θ)` and changing variables in the
//! Fourier integral of the beamformed line gives
//!
//! ```text
//! q_{k,m}(u) = I[|γ|, τ_m(T)) (u) · (1 + γ² cos²θ / (u − γ sinθ)²)
//!              · exp{ i (2π/T) k γ (γ − u sinθ) / (u − γ sinθ) }
//! ```
//!
//! with `γ = δ_m / c`, so that `c_k = 1/(M N) Σ_m Σ_j Q_{k,m}[j] φ_m[k − j]`
//! in unnormalized DFT terms, where `Q_{k,m}` is the length-N DFT of
//! `q_{k,m}` sampled on the acquisition grid. The line window of the setup
//! multiplies `q` by `w(t(u))`; with an empty window this is exactly the
//! kernel above. `T` is the sampled period `N / fs`.
//!
//! Only a short run of offsets `j` around zero carries appreciable energy,
//! and the table keeps just that run per `(m, k)`.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{LineWindow, Setup};
use crate::dft::Dft;
use crate::error::{Error, Result};
use crate::time_bf::{beam_time, delay_map};

/// `q_{k,m}(u; θ)` for one element and direction, independent of `k`
/// except through the phase.
#[derive(Debug, Clone, Copy)]
pub struct QKernel {
    gamma: f64,
    sin: f64,
    cos2: f64,
    theta: f64,
    period: f64,
    support: (f64, f64),
    window: LineWindow,
}

impl QKernel {
    pub fn new(setup: &Setup, m: usize, theta: f64) -> Result<Self> {
        let grid = setup.grid()?;
        let gamma = setup.geometry.gamma(m);
        let period = grid.period();
        let (sin, cos) = theta.sin_cos();
        Ok(Self {
            gamma,
            sin,
            cos2: cos * cos,
            theta,
            period,
            support: (gamma.abs(), delay_map(period, theta, gamma)),
            window: setup.line_window()?,
        })
    }

    /// Amplitude and unit phase `ψ` with `q_k(u) = A e^{i k ψ}`, or `None`
    /// outside the support. The indicator is checked before the rational
    /// factors are touched, so the pole at `u = γ sinθ` is never reached.
    pub fn amplitude_phase(&self, u: f64) -> Option<(f64, f64)> {
        if u < self.support.0 || u >= self.support.1 {
            return None;
        }
        let g = self.gamma;
        if g == 0.0 {
            let w = self.window.weight(u);
            return Some((w, 0.0));
        }
        let den = u - g * self.sin;
        let a = 1.0 + g * g * self.cos2 / (den * den);
        let psi = 2.0 * std::f64::consts::PI / self.period * g * (g - u * self.sin) / den;
        let w = self.window.weight(beam_time(u, self.theta, g));
        Some((a * w, psi))
    }

    pub fn eval(&self, u: f64, k: i64) -> Complex64 {
        match self.amplitude_phase(u) {
            Some((a, psi)) if a != 0.0 => Complex64::from_polar(a, k as f64 * psi),
            _ => Complex64::new(0.0, 0.0),
        }
    }
}

/// Single evaluation of `q_{k,m}(u; θ)` for the setup.
pub fn eval_q(setup: &Setup, m: usize, theta: f64, k: i64, u: f64) -> Result<Complex64> {
    Ok(QKernel::new(setup, m, theta)?.eval(u, k))
}

/// Retained kernel coefficients for one `(m, k)`: `Q[j]` for
/// `j = lo, lo + 1, …, lo + coeffs.len() − 1` (signed offsets, mod N).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEntry {
    pub lo: i64,
    pub coeffs: Vec<Complex64>,
    /// `Σ_j |Q[j]|²` over all N offsets before truncation.
    pub total_energy: f64,
}

impl KernelEntry {
    pub fn offsets(&self) -> std::ops::Range<i64> {
        self.lo..self.lo + self.coeffs.len() as i64
    }

    pub fn kept_energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QKernelTable {
    pub theta: f64,
    pub epsilon: f64,
    pub samples: usize,
    pub elements: usize,
    bins: Vec<usize>,
    /// Row-major `elements × bins.len()`.
    entries: Vec<KernelEntry>,
}

impl QKernelTable {
    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn entry(&self, m: usize, bin_index: usize) -> &KernelEntry {
        &self.entries[m * self.bins.len() + bin_index]
    }

    /// Channel bins `k − j` needed for beamformed bin `bins[bin_index]`.
    pub fn nu_of(&self, bin_index: usize) -> BTreeSet<usize> {
        let k = self.bins[bin_index] as i64;
        let n = self.samples as i64;
        let mut out = BTreeSet::new();
        for m in 0..self.elements {
            for j in self.entry(m, bin_index).offsets() {
                out.insert((k - j).rem_euclid(n) as usize);
            }
        }
        out
    }

    /// Union of the channel bins needed for the given beamformed bins.
    pub fn nu_for(&self, bins: &[usize]) -> Result<Vec<usize>> {
        let n = self.samples as i64;
        let mut out = BTreeSet::new();
        for &b in bins {
            let i = self
                .bins
                .binary_search(&b)
                .map_err(|_| Error::config("bins", format!("bin {b} is not in the kernel table")))?;
            let k = b as i64;
            for m in 0..self.elements {
                for j in self.entry(m, i).offsets() {
                    out.insert((k - j).rem_euclid(n) as usize);
                }
            }
        }
        Ok(out.into_iter().collect())
    }

    /// The per-channel sample set ν = ∪_k ν(k).
    pub fn nu(&self) -> Vec<usize> {
        self.nu_for(&self.bins.clone()).expect("own bins")
    }

    pub fn stats(&self) -> KernelStats {
        KernelStats::new(self.samples, self.bins.len(), self.nu().len())
    }

    /// Table restricted to a subset of its bins.
    pub fn restrict(&self, bins: &[usize]) -> Result<QKernelTable> {
        let mut idx = Vec::with_capacity(bins.len());
        for &b in bins {
            idx.push(
                self.bins
                    .binary_search(&b)
                    .map_err(|_| Error::config("bins", format!("bin {b} is not in the kernel table")))?,
            );
        }
        let mut entries = Vec::with_capacity(self.elements * bins.len());
        for m in 0..self.elements {
            for &i in &idx {
                entries.push(self.entry(m, i).clone());
            }
        }
        Ok(QKernelTable {
            theta: self.theta,
            epsilon: self.epsilon,
            samples: self.samples,
            elements: self.elements,
            bins: bins.to_vec(),
            entries,
        })
    }
}

/// Sample-budget summary for one table.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KernelStats {
    pub samples: usize,
    pub kappa: usize,
    pub nu: usize,
    pub ratio: f64,
    pub reduction: f64,
}

impl KernelStats {
    pub fn new(samples: usize, kappa: usize, nu: usize) -> Self {
        Self {
            samples,
            kappa,
            nu,
            ratio: nu as f64 / kappa.max(1) as f64,
            reduction: samples as f64 / nu.max(1) as f64,
        }
    }
}

/// Smallest-power coefficients that can be dropped without exceeding
/// `budget` energy: returns the largest dropped power, or `None` when not
/// even the smallest coefficient fits.
fn drop_threshold(powers: &mut [f64], mut budget: f64) -> Option<f64> {
    let mut slice = powers;
    let mut best: Option<f64> = None;
    while !slice.is_empty() {
        let mid = slice.len() / 2;
        let (lower, pivot, upper) = slice.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        let pivot = *pivot;
        let lower_sum: f64 = lower.iter().sum();
        if lower_sum + pivot <= budget {
            budget -= lower_sum + pivot;
            best = Some(pivot);
            slice = upper;
        } else {
            slice = lower;
        }
    }
    best
}

/// Picks the contiguous offset window for one kernel spectrum. Greedy by
/// magnitude: coefficients are dropped from the smallest up while the
/// dropped energy stays within `epsilon` of the total, and the window is
/// the span of what remains.
fn select_window(spectrum: &[Complex64], epsilon: f64, scratch: &mut Vec<f64>) -> (i64, i64, f64) {
    let n = spectrum.len();
    scratch.clear();
    scratch.extend(spectrum.iter().map(|c| c.norm_sqr()));
    let total: f64 = scratch.iter().sum();
    if total == 0.0 {
        return (0, 0, 0.0);
    }
    let cut = drop_threshold(scratch, epsilon * total);
    let signed = |i: usize| if 2 * i < n { i as i64 } else { i as i64 - n as i64 };
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for (i, c) in spectrum.iter().enumerate() {
        let keep = match cut {
            Some(p) => c.norm_sqr() > p,
            None => true,
        };
        if keep {
            let j = signed(i);
            lo = lo.min(j);
            hi = hi.max(j);
        }
    }
    if lo > hi {
        // everything fit in the budget; keep the strongest coefficient
        let (i, _) = spectrum
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
            .unwrap();
        lo = signed(i);
        hi = lo;
    }
    // ties at the cut value can push the dropped energy over; widen if so
    loop {
        let kept: f64 = (lo..=hi).map(|j| spectrum[j.rem_euclid(n as i64) as usize].norm_sqr()).sum();
        if total - kept <= epsilon * total || hi - lo + 1 >= n as i64 {
            break;
        }
        let left = spectrum[(lo - 1).rem_euclid(n as i64) as usize].norm_sqr();
        let right = spectrum[(hi + 1).rem_euclid(n as i64) as usize].norm_sqr();
        if left >= right {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    (lo, hi, total)
}

/// Builds the kernel table for direction `theta` on the beamformed bins
/// `bins` (sorted, each below N).
pub fn build_kernel_table(setup: &Setup, theta: f64, bins: &[usize], epsilon: f64) -> Result<QKernelTable> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::config("kernel_epsilon", format!("{epsilon} is not in (0, 1)")));
    }
    let grid = setup.grid()?;
    let n = grid.samples;
    if bins.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("bins", "bins must be strictly increasing"));
    }
    if let Some(&b) = bins.iter().find(|&&b| b >= n) {
        return Err(Error::config("bins", format!("bin {b} is outside 0..{n}")));
    }
    let elements = setup.geometry.element_count();
    let dft = Dft::new(n);

    let per_element: Vec<Result<Vec<KernelEntry>>> = (0..elements)
        .into_par_iter()
        .map(|m| {
            let kernel = QKernel::new(setup, m, theta)?;
            let mut amp = Vec::new();
            let mut psi = Vec::new();
            let mut idx = Vec::new();
            for i in 0..n {
                if let Some((a, p)) = kernel.amplitude_phase(grid.time(i)) {
                    if a != 0.0 {
                        idx.push(i);
                        amp.push(a);
                        psi.push(p);
                    }
                }
            }
            let step: Vec<Complex64> = psi.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
            let mut rot: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); idx.len()];
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = Vec::with_capacity(n);
            let mut entries = Vec::with_capacity(bins.len());
            let mut prev: Option<usize> = None;
            for (bi, &k) in bins.iter().enumerate() {
                // advance e^{ikψ} by recurrence for consecutive bins,
                // re-seeding periodically to bound rounding drift
                let reseed = match prev {
                    Some(p) => k != p + 1 || bi % 64 == 0,
                    None => true,
                };
                if reseed {
                    for (r, &p) in rot.iter_mut().zip(&psi) {
                        *r = Complex64::from_polar(1.0, k as f64 * p);
                    }
                } else {
                    for (r, s) in rot.iter_mut().zip(&step) {
                        *r *= s;
                    }
                }
                prev = Some(k);
                buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for ((&i, &a), r) in idx.iter().zip(&amp).zip(&rot) {
                    buf[i] = r * a;
                }
                dft.forward_in_place(&mut buf);
                let (lo, hi, total) = select_window(&buf, epsilon, &mut scratch);
                let coeffs = (lo..=hi)
                    .map(|j| buf[j.rem_euclid(n as i64) as usize])
                    .collect();
                entries.push(KernelEntry {
                    lo,
                    coeffs,
                    total_energy: total,
                });
            }
            Ok(entries)
        })
        .collect();

    let mut entries = Vec::with_capacity(elements * bins.len());
    for e in per_element {
        entries.extend(e?);
    }
    Ok(QKernelTable {
        theta,
        epsilon,
        samples: n,
        elements,
        bins: bins.to_vec(),
        entries,
    })
}

/// Content hash identifying a table: everything it depends on.
pub fn cache_key(setup: &Setup, theta: f64, bins: &[usize], epsilon: f64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"fdbf-kernel-v1\n");
    h.update(setup.to_text().as_bytes());
    h.update(theta.to_le_bytes());
    h.update(epsilon.to_le_bytes());
    for &b in bins {
        h.update((b as u64).to_le_bytes());
    }
    h.finalize().into()
}

const MAGIC: &[u8; 4] = b"SNQK";
const VERSION: u16 = 1;

impl QKernelTable {
    /// Little-endian cache file: `SNQK`, version u16, 32-byte content
    /// hash, M u32, K u32, N u32, θ f64, ε f64, K bins u32, then per
    /// `(m, k)` row-major: lo i64, count u32, total energy f64 and
    /// `count` complex values as (re, im) f64 pairs.
    pub fn write_to(&self, key: &[u8; 32], mut w: impl Write) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(key);
        buf.extend_from_slice(&(self.elements as u32).to_le_bytes());
        buf.extend_from_slice(&(self.bins.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.samples as u32).to_le_bytes());
        buf.extend_from_slice(&self.theta.to_le_bytes());
        buf.extend_from_slice(&self.epsilon.to_le_bytes());
        for &b in &self.bins {
            buf.extend_from_slice(&(b as u32).to_le_bytes());
        }
        for e in &self.entries {
            buf.extend_from_slice(&e.lo.to_le_bytes());
            buf.extend_from_slice(&(e.coeffs.len() as u32).to_le_bytes());
            buf.extend_from_slice(&e.total_energy.to_le_bytes());
            for c in &e.coeffs {
                buf.extend_from_slice(&c.re.to_le_bytes());
                buf.extend_from_slice(&c.im.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a cache file, returning its content hash with the table.
    pub fn read_from(mut r: impl Read) -> Result<([u8; 32], QKernelTable)> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::format("kernel cache", "missing SNQK header"));
        }
        let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::format("kernel cache", format!("unsupported version {version}")));
        }
        let key: [u8; 32] = cur.take(32)?.try_into().unwrap();
        let elements = cur.u32()? as usize;
        let k = cur.u32()? as usize;
        let samples = cur.u32()? as usize;
        let theta = cur.f64()?;
        let epsilon = cur.f64()?;
        let mut bins = Vec::with_capacity(k);
        for _ in 0..k {
            bins.push(cur.u32()? as usize);
        }
        let mut entries = Vec::with_capacity(elements * k);
        for _ in 0..elements * k {
            let lo = i64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let count = cur.u32()? as usize;
            let total_energy = cur.f64()?;
            let mut coeffs = Vec::with_capacity(count);
            for _ in 0..count {
                let re = cur.f64()?;
                let im = cur.f64()?;
                coeffs.push(Complex64::new(re, im));
            }
            entries.push(KernelEntry {
                lo,
                coeffs,
                total_energy,
            });
        }
        if cur.pos != bytes.len() {
            return Err(Error::format("kernel cache", "trailing bytes"));
        }
        Ok((
            key,
            QKernelTable {
                theta,
                epsilon,
                samples,
                elements,
                bins,
                entries,
            },
        ))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("kernel cache", "file is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// File a table with the given key is cached under.
pub fn cache_path(dir: &Path, key: &[u8; 32]) -> PathBuf {
    dir.join(format!("{}.snqk", hex::encode(&key[..16])))
}

/// Loads the table from `dir` when a file with a matching content hash
/// exists, otherwise builds it and writes it there.
pub fn build_cached(dir: &Path, setup: &Setup, theta: f64, bins: &[usize], epsilon: f64) -> Result<QKernelTable> {
    let key = cache_key(setup, theta, bins, epsilon);
    let path = cache_path(dir, &key);
    if let Ok(file) = std::fs::File::open(&path) {
        if let Ok((stored, table)) = QKernelTable::read_from(std::io::BufReader::new(file)) {
            if stored == key {
                return Ok(table);
            }
        }
    }
    let table = build_kernel_table(setup, theta, bins, epsilon)?;
    std::fs::create_dir_all(dir)?;
    let tmp = path.with_extension("tmp");
    table.write_to(&key, std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
    std::fs::rename(&tmp, &path)?;
    Ok(table)
}
