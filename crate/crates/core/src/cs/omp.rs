//! Orthogonal matching pursuit over the on-grid delay dictionary.

use num_complex::Complex64;

use super::{atom, PartialMeasurement};
use crate::dft::Dft;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmpParams {
    pub max_atoms: usize,
    /// Stop once `‖r‖ ≤ tolerance · ‖y‖`.
    pub tolerance: f64,
    /// Local swap search after the greedy pass: each atom may move by up
    /// to `radius` samples (default `⌈N/|μ|⌉`, about one mainlobe width)
    /// when that strictly lowers the residual.
    pub refine: bool,
    pub radius: Option<usize>,
}

impl OmpParams {
    pub fn new(max_atoms: usize) -> Self {
        Self {
            max_atoms,
            tolerance: 1e-10,
            refine: true,
            radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    /// Delay indices, ascending.
    pub support: Vec<usize>,
    pub amplitudes: Vec<Complex64>,
    pub residual_norm: f64,
    /// Residual norm after each accepted step, starting with `‖y‖`.
    pub residual_trace: Vec<f64>,
    pub iterations: usize,
    /// Set when a new atom made the least-squares fit singular; that atom
    /// was dropped and the pursuit stopped.
    pub rank_deficient: bool,
}

/// Least squares on the given atom columns by Gram-Schmidt with one
/// reorthogonalization pass. `None` when a column is numerically
/// dependent on the earlier ones.
fn least_squares(cols: &[Vec<Complex64>], y: &[Complex64]) -> Option<(Vec<Complex64>, f64)> {
    let p = cols.len();
    let mut q: Vec<Vec<Complex64>> = Vec::with_capacity(p);
    let mut r = vec![vec![Complex64::new(0.0, 0.0); p]; p];
    for (j, a) in cols.iter().enumerate() {
        let mut v = a.clone();
        let a_norm = norm(a);
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let proj = dot(qi, &v);
                r[i][j] += proj;
                for (vk, qk) in v.iter_mut().zip(qi) {
                    *vk -= proj * qk;
                }
            }
        }
        let nv = norm(&v);
        if !(nv > 1e-10 * a_norm) {
            return None;
        }
        r[j][j] = Complex64::new(nv, 0.0);
        v.iter_mut().for_each(|x| *x /= nv);
        q.push(v);
    }
    let z: Vec<Complex64> = q.iter().map(|qi| dot(qi, y)).collect();
    let mut coef = vec![Complex64::new(0.0, 0.0); p];
    for i in (0..p).rev() {
        let mut s = z[i];
        for k in i + 1..p {
            s -= r[i][k] * coef[k];
        }
        coef[i] = s / r[i][i];
    }
    let mut res = y.to_vec();
    for (c, col) in coef.iter().zip(cols) {
        for (rk, ak) in res.iter_mut().zip(col) {
            *rk -= c * ak;
        }
    }
    Some((coef, norm(&res)))
}

fn orthonormal_basis(cols: &[Vec<Complex64>]) -> Option<Vec<Vec<Complex64>>> {
    let mut q: Vec<Vec<Complex64>> = Vec::with_capacity(cols.len());
    for a in cols {
        let mut v = project_out(&q, a);
        v = project_out(&q, &v);
        let nv = norm(&v);
        if !(nv > 1e-10 * norm(a)) {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        q.push(v);
    }
    Some(q)
}

fn project_out(basis: &[Vec<Complex64>], x: &[Complex64]) -> Vec<Complex64> {
    let mut v = x.to_vec();
    for qi in basis {
        let proj = dot(qi, &v);
        for (vk, qk) in v.iter_mut().zip(qi) {
            *vk -= proj * qk;
        }
    }
    v
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn recover_omp(meas: &PartialMeasurement, params: &OmpParams) -> Result<SparseSolution> {
    let m = meas.mu.len();
    if params.max_atoms == 0 {
        return Err(Error::config("L", "at least one atom is required"));
    }
    if 2 * params.max_atoms > m {
        return Err(Error::config(
            "L",
            format!("{} atoms need at least {} measurements, have {m}", params.max_atoms, 2 * params.max_atoms),
        ));
    }
    let n = meas.samples;
    let column = |q: usize| -> Vec<Complex64> { meas.mu.iter().map(|&k| atom(k, q, n)).collect() };
    let y = &meas.values;
    let y_norm = norm(y);
    let mut trace = vec![y_norm];
    let mut support: Vec<usize> = Vec::new();
    let mut cols: Vec<Vec<Complex64>> = Vec::new();
    let mut coef: Vec<Complex64> = Vec::new();
    let mut res_norm = y_norm;
    let mut rank_deficient = false;
    let mut iterations = 0;
    let dft = Dft::new(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut residual = y.clone();

    while support.len() < params.max_atoms && res_norm > params.tolerance * y_norm {
        iterations += 1;
        // correlation with every atom at once: Σ_k r_k e^{+i2πkq/N}
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (&k, &r) in meas.mu.iter().zip(&residual) {
            buf[k % n] += r;
        }
        dft.inverse_in_place(&mut buf);
        let mut best: Option<(usize, f64)> = None;
        for (q, v) in buf.iter().enumerate() {
            let mag = v.norm_sqr();
            if support.contains(&q) {
                continue;
            }
            if best.is_none_or(|(_, b)| mag > b) {
                best = Some((q, mag));
            }
        }
        let Some((q, _)) = best else { break };
        support.push(q);
        cols.push(column(q));
        match least_squares(&cols, y) {
            Some((c, rn)) => {
                coef = c;
                res_norm = rn;
                residual = y.clone();
                for (c, col) in coef.iter().zip(&cols) {
                    for (rk, ak) in residual.iter_mut().zip(col) {
                        *rk -= c * ak;
                    }
                }
                trace.push(res_norm);
            }
            None => {
                support.pop();
                cols.pop();
                rank_deficient = true;
                break;
            }
        }
    }

    if params.refine && !support.is_empty() && res_norm > params.tolerance * y_norm {
        let radius = params.radius.unwrap_or_else(|| n.div_ceil(m)) as i64;
        loop {
            let mut improved = false;
            for i in 0..support.len() {
                // residual of y against the other atoms, then the drop from
                // adding one candidate is |<v, r>|² / ‖v‖² with v the
                // candidate's component orthogonal to those atoms
                let others: Vec<Vec<Complex64>> =
                    cols.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, c)| c.clone()).collect();
                let Some(basis) = orthonormal_basis(&others) else { continue };
                let r_o = project_out(&basis, y);
                let r_o_sq = norm(&r_o).powi(2);
                let mut best: Option<usize> = None;
                let mut best_norm = res_norm;
                for d in -radius..=radius {
                    let cand = support[i] as i64 + d;
                    if d == 0 || cand < 0 || cand >= n as i64 || support.contains(&(cand as usize)) {
                        continue;
                    }
                    let v = project_out(&basis, &column(cand as usize));
                    let v_sq = norm(&v).powi(2);
                    if !(v_sq > 1e-20 * meas.mu.len() as f64) {
                        continue;
                    }
                    let rn = (r_o_sq - dot(&v, &r_o).norm_sqr() / v_sq).max(0.0).sqrt();
                    if rn < best_norm * (1.0 - 1e-9) {
                        best_norm = rn;
                        best = Some(cand as usize);
                    }
                }
                let best = best.and_then(|cand| {
                    let mut trial = cols.clone();
                    trial[i] = column(cand);
                    least_squares(&trial, y)
                        .filter(|&(_, rn)| rn < res_norm)
                        .map(|(c, rn)| (cand, c, rn))
                });
                if let Some((cand, c, rn)) = best {
                    support[i] = cand;
                    cols[i] = column(cand);
                    coef = c;
                    res_norm = rn;
                    trace.push(rn);
                    iterations += 1;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }

    let mut order: Vec<usize> = (0..support.len()).collect();
    order.sort_by_key(|&i| support[i]);
    Ok(SparseSolution {
        support: order.iter().map(|&i| support[i]).collect(),
        amplitudes: order.iter().map(|&i| coef[i]).collect(),
        residual_norm: res_norm,
        residual_trace: trace,
        iterations,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measurement(n: usize, mu: Vec<usize>, q: &[usize], b: &[f64]) -> PartialMeasurement {
        let values = mu
            .iter()
            .map(|&k| q.iter().zip(b).map(|(&q, &b)| b * atom(k, q, n)).sum())
            .collect();
        PartialMeasurement {
            pulse: vec![Complex64::new(1.0, 0.0); mu.len()],
            mu,
            values,
            samples: n,
        }
    }

    #[test]
    fn zero_measurement_gives_empty_support() {
        let meas = measurement(256, (40..60).collect(), &[], &[]);
        let s = recover_omp(&meas, &OmpParams::new(3)).unwrap();
        assert!(s.support.is_empty());
        assert_eq!(s.residual_norm, 0.0);
    }

    #[test]
    fn single_atom_matches_brute_force_argmax() {
        let n = 512;
        let mu: Vec<usize> = (60..100).collect();
        let meas = measurement(n, mu.clone(), &[301], &[-0.7]);
        // brute force: correlate against every atom directly
        let mut best = (0, 0.0);
        for q in 0..n {
            let c: Complex64 = mu.iter().zip(&meas.values).map(|(&k, v)| atom(k, q, n).conj() * v).sum();
            if c.norm() > best.1 {
                best = (q, c.norm());
            }
        }
        assert_eq!(best.0, 301);
        let s = recover_omp(&meas, &OmpParams::new(1)).unwrap();
        assert_eq!(s.support, vec![301]);
        assert!((s.amplitudes[0] - Complex64::new(-0.7, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn residual_never_increases() {
        let n = 400;
        let meas = measurement(n, (50..110).collect(), &[30, 90, 200, 260, 330], &[1.0, -0.6, 0.8, 0.5, -0.9]);
        let s = recover_omp(&meas, &OmpParams::new(5)).unwrap();
        for w in s.residual_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn dependent_atom_is_dropped_and_flagged() {
        // every row measures the DC bin, so all atoms are the same column
        let lonely = PartialMeasurement {
            mu: vec![0, 0, 0, 0],
            values: [1.0, 2.0, 1.0, 2.0].iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            pulse: vec![Complex64::new(1.0, 0.0); 4],
            samples: 64,
        };
        let mut p = OmpParams::new(2);
        p.refine = false;
        let s = recover_omp(&lonely, &p).unwrap();
        assert!(s.rank_deficient);
        assert_eq!(s.support.len(), 1);
    }

    #[test]
    fn rejects_unidentifiable_requests() {
        let meas = measurement(64, vec![1, 2, 3], &[3], &[1.0]);
        assert!(recover_omp(&meas, &OmpParams::new(2)).is_err());
        assert!(recover_omp(&meas, &OmpParams::new(0)).is_err());
    }
}
