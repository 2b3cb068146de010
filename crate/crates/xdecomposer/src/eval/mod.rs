//! Metrics, peak geometry, retrieval, and run-level evaluation reports.

mod peaks;
mod report;
mod retrieval;

pub use peaks::{detect_peaks, match_peaks, peak_metrics, PeakMeasurement};
pub use report::{evaluate_run, EvalReport, GroupMetrics};
pub use retrieval::{RetrievalIndex, DEFAULT_CANDIDATES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("empty retrieval index")]
    EmptyIndex,
    #[error("patterns are on different grids")]
    GridMismatch,
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Pattern(#[from] crate::pattern::PatternError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Default peak detection threshold as a fraction of the pattern maximum.
pub const PEAK_MIN_HEIGHT: f64 = 0.05;
/// Default minimum peak separation, degrees.
pub const PEAK_MIN_SEPARATION: f64 = 0.2;
/// Default peak matching tolerance, degrees.
pub const PEAK_MATCH_TOL: f64 = 0.5;

/// Centered Pearson correlation. Constant inputs are undefined and reported
/// as an error so aggregates can exclude them explicitly.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvalError::DegenerateInput("need at least 2 points".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(EvalError::DegenerateInput("constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn self_correlation_is_one() {
        let x = [0.3, 1.2, 0.7, 2.5];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scaled_input_is_one() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reversed_ramp_is_minus_one() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_input_is_undefined() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(EvalError::DegenerateInput(_))
        ));
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            pearson(&[1.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn symmetric_and_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..50 {
            let a: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = pearson(&a, &b).unwrap();
            assert!((pearson(&b, &a).unwrap() - p).abs() < 1e-12);
            let s = rng.gen_range(0.1..5.0);
            let c = rng.gen_range(-2.0..2.0);
            let bt: Vec<f64> = b.iter().map(|v| s * v + c).collect();
            assert!((pearson(&a, &bt).unwrap() - p).abs() < 1e-10);
            assert!((-1.0..=1.0).contains(&p));
        }
    }
}
