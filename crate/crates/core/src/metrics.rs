//! Error measures used to compare reconstructions with the time-domain
//! reference.

use crate::image::envelope;

/// `‖estimate − reference‖₂ / ‖reference‖₂`. Zero when both are zero,
/// infinite when only the reference is.
pub fn nrmse(estimate: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(estimate.len(), reference.len(), "signals differ in length");
    let err: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = reference.iter().map(|b| b * b).sum();
    if norm == 0.0 {
        return if err == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (err / norm).sqrt()
}

/// NRMSE between the envelopes of two lines, normalized by the reference
/// envelope.
pub fn envelope_nrmse(estimate: &[f64], reference: &[f64]) -> f64 {
    nrmse(&envelope(estimate), &envelope(reference))
}

/// Index of the largest value within `center ± half_width`.
pub fn peak_near(values: &[f64], center: usize, half_width: usize) -> usize {
    let lo = center.saturating_sub(half_width);
    let hi = (center + half_width + 1).min(values.len());
    let mut best = lo;
    for i in lo..hi {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nrmse_basics() {
        assert_eq!(nrmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((nrmse(&[0.0, 0.0], &[3.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(nrmse(&[0.0], &[0.0]), 0.0);
        assert!(nrmse(&[1.0], &[0.0]).is_infinite());
    }

    #[test]
    fn peak_search_is_windowed() {
        let v = [0.0, 5.0, 1.0, 2.0, 3.0, 0.5];
        assert_eq!(peak_near(&v, 3, 1), 4);
        assert_eq!(peak_near(&v, 0, 10), 1);
    }
}
