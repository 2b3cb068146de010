//! Experimental-pattern preprocessing: SNIP background estimation and
//! resampling of irregular scans onto the canonical grid.

use super::DataError;
use crate::pattern::{DiffractionPattern, Grid, PatternError};

/// Window schedule of the SNIP min-average sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnipSchedule {
    /// m = 1..M (standard).
    #[default]
    Increasing,
    /// m = M..1.
    Decreasing,
}

/// Default SNIP iteration count; about one typical peak half-width in steps.
pub const SNIP_DEFAULT_M: usize = 24;

/// SNIP background estimate.
///
/// Log-log-sqrt (LLS) transform, M clipping sweeps with window m and
/// clamped-edge indexing, inverse transform, and a final pointwise min with
/// the input so the background never exceeds the signal.
pub fn snip_background(
    pattern: &DiffractionPattern,
    iterations: usize,
    schedule: SnipSchedule,
) -> Result<Vec<f64>, DataError> {
    let y = &pattern.intensities;
    if let Some(i) = y.iter().position(|&v| v < 0.0) {
        return Err(DataError::NegativeInput(i));
    }
    let iterations = iterations.max(1);
    let mut v: Vec<f64> = y
        .iter()
        .map(|&t| (((t + 1.0).sqrt() + 1.0).ln() + 1.0).ln())
        .collect();
    let n = v.len();
    let windows: Vec<usize> = match schedule {
        SnipSchedule::Increasing => (1..=iterations).collect(),
        SnipSchedule::Decreasing => (1..=iterations).rev().collect(),
    };
    let mut next = v.clone();
    for m in windows {
        for i in 0..n {
            let lo = i.saturating_sub(m);
            let hi = (i + m).min(n - 1);
            let avg = 0.5 * (v[lo] + v[hi]);
            next[i] = v[i].min(avg);
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok(v.iter()
        .zip(y)
        .map(|(&t, &orig)| {
            let b = (t.exp() - 1.0).exp() - 1.0;
            (b * b - 1.0).max(0.0).min(orig)
        })
        .collect())
}

/// Linearly interpolate an irregular scan onto `grid`, zero-extending outside
/// the covered span, then normalize to max 1.
pub fn resample_to_grid(raw: &[(f64, f64)], grid: Grid) -> Result<DiffractionPattern, DataError> {
    if raw.is_empty() {
        return Err(PatternError::EmptyInput.into());
    }
    for i in 1..raw.len() {
        if raw[i].0 <= raw[i - 1].0 {
            return Err(PatternError::NonMonotonicAngles(i).into());
        }
    }
    let mut values = vec![0.0; grid.len];
    let mut seg = 0usize;
    for (i, v) in values.iter_mut().enumerate() {
        let angle = grid.angle(i);
        if angle < raw[0].0 || angle > raw[raw.len() - 1].0 {
            continue;
        }
        while seg + 1 < raw.len() && raw[seg + 1].0 < angle {
            seg += 1;
        }
        let (a0, y0) = raw[seg];
        let (a1, y1) = raw[(seg + 1).min(raw.len() - 1)];
        *v = if a1 > a0 {
            y0 + (y1 - y0) * (angle - a0) / (a1 - a0)
        } else {
            y0
        };
    }
    let mut p = DiffractionPattern::new(grid, values)?;
    p.normalize_max();
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(10.0, 0.02, 500)
    }

    fn pattern(values: Vec<f64>) -> DiffractionPattern {
        DiffractionPattern::new(grid(), values).unwrap()
    }

    #[test]
    fn constant_is_a_fixed_point() {
        let p = pattern(vec![3.5; 500]);
        let bg = snip_background(&p, SNIP_DEFAULT_M, SnipSchedule::Increasing).unwrap();
        for b in bg {
            assert!((b - 3.5).abs() < 1e-9, "{b}");
        }
    }

    #[test]
    fn gaussian_peak_on_offset_recovers_offset() {
        let c = 2.0;
        let center = 250.0;
        let sigma = 5.0; // grid steps; FWHM ~ 11.8 steps
        let fwhm = 2.354820045 * sigma;
        let values: Vec<f64> = (0..500)
            .map(|i| {
                let z = (i as f64 - center) / sigma;
                c + 40.0 * (-0.5 * z * z).exp()
            })
            .collect();
        let p = pattern(values);
        let bg = snip_background(&p, SNIP_DEFAULT_M, SnipSchedule::Increasing).unwrap();
        for (i, b) in bg.iter().enumerate() {
            if (i as f64 - center).abs() >= 3.0 * fwhm {
                assert!((b - c).abs() < 0.05 * c, "bg {b} at {i}");
            }
        }
        // clamping invariant
        for (b, y) in bg.iter().zip(&p.intensities) {
            assert!(b <= y);
        }
    }

    #[test]
    fn near_idempotent_on_the_synthetic_oracle() {
        let values: Vec<f64> = (0..500)
            .map(|i| {
                let z = (i as f64 - 250.0) / 5.0;
                2.0 + 40.0 * (-0.5 * z * z).exp()
            })
            .collect();
        let p = pattern(values);
        let bg = snip_background(&p, SNIP_DEFAULT_M, SnipSchedule::Increasing).unwrap();
        let residual =
            pattern(p.intensities.iter().zip(&bg).map(|(y, b)| y - b).collect());
        let bg2 = snip_background(&residual, SNIP_DEFAULT_M, SnipSchedule::Increasing).unwrap();
        let amp = bg.iter().cloned().fold(0.0, f64::max);
        let amp2 = bg2.iter().cloned().fold(0.0, f64::max);
        assert!(amp2 < 0.01 * amp + 1e-12, "{amp2} vs {amp}");
    }

    #[test]
    fn negative_input_rejected() {
        let mut values = vec![1.0; 500];
        values[3] = -0.5;
        let p = pattern(values);
        assert!(matches!(
            snip_background(&p, 8, SnipSchedule::Increasing),
            Err(DataError::NegativeInput(3))
        ));
    }

    #[test]
    fn resample_identity_on_grid() {
        let g = grid();
        let raw: Vec<(f64, f64)> = (0..g.len).map(|i| (g.angle(i), (i % 7) as f64)).collect();
        let p = resample_to_grid(&raw, g).unwrap();
        for (i, v) in p.intensities.iter().enumerate() {
            assert!((v - (i % 7) as f64 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_two_point_ramp() {
        let g = Grid::new(10.0, 0.02, 3500);
        let p = resample_to_grid(&[(10.0, 0.0), (80.0, 1.0)], g).unwrap();
        // linear ramp, normalized so the last grid point is 1
        let end = (79.98 - 10.0) / 70.0;
        for (i, v) in p.intensities.iter().enumerate() {
            let expect = (g.angle(i) - 10.0) / 70.0 / end;
            assert!((v - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_zero_extends() {
        let g = Grid::new(10.0, 0.02, 3500);
        let raw = vec![(15.0, 1.0), (70.0, 1.0)];
        let p = resample_to_grid(&raw, g).unwrap();
        for (i, v) in p.intensities.iter().enumerate() {
            let a = g.angle(i);
            if a < 15.0 - 1e-9 || a > 70.0 + 1e-9 {
                assert_eq!(*v, 0.0, "at {a}");
            } else {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resample_rejects_bad_input() {
        let g = grid();
        assert!(matches!(
            resample_to_grid(&[], g),
            Err(DataError::Pattern(PatternError::EmptyInput))
        ));
        assert!(matches!(
            resample_to_grid(&[(10.0, 1.0), (10.0, 2.0)], g),
            Err(DataError::Pattern(PatternError::NonMonotonicAngles(1)))
        ));
    }
}
