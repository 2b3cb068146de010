//! Peak detection, matching, and geometry metrics.

use crate::pattern::DiffractionPattern;

/// One detected peak with sub-grid position refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakMeasurement {
    /// Degrees two-theta, parabola-refined.
    pub position: f64,
    /// Intensity at the grid maximum.
    pub height: f64,
    /// Degrees, interpolated half-maximum crossings.
    pub fwhm: f64,
}

/// Local maxima above `min_height` (fraction of the pattern max), separated
/// by at least `min_separation` degrees, strongest first when conflicting.
pub fn detect_peaks(
    pattern: &DiffractionPattern,
    min_height: f64,
    min_separation: f64,
) -> Vec<PeakMeasurement> {
    let y = &pattern.intensities;
    let grid = pattern.grid;
    let max = pattern.max_intensity();
    if max <= 0.0 || y.len() < 3 {
        return Vec::new();
    }
    let threshold = min_height * max;
    let mut candidates: Vec<usize> = (1..y.len() - 1)
        .filter(|&i| y[i] > threshold && y[i] > y[i - 1] && y[i] >= y[i + 1])
        .collect();
    // strongest-first separation filter
    candidates.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in candidates {
        if kept
            .iter()
            .all(|&j| (i as f64 - j as f64).abs() * grid.step >= min_separation)
        {
            kept.push(i);
        }
    }
    kept.sort_unstable();

    kept.iter()
        .map(|&i| {
            let (yl, yc, yr) = (y[i - 1], y[i], y[i + 1]);
            let denom = yl - 2.0 * yc + yr;
            let offset = if denom.abs() > 1e-300 {
                (0.5 * (yl - yr) / denom).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            let position = grid.angle(i) + offset * grid.step;
            let half = yc / 2.0;
            let left = half_crossing(y, i, half, grid.step, -1);
            let right = half_crossing(y, i, half, grid.step, 1);
            PeakMeasurement {
                position,
                height: yc,
                fwhm: (left + right).max(grid.step * 1e-6),
            }
        })
        .collect()
}

/// Distance in degrees from index `i` to the half-max crossing in the given
/// direction; falls back to the distance to the pattern edge.
fn half_crossing(y: &[f64], i: usize, half: f64, step: f64, dir: isize) -> f64 {
    let mut j = i as isize;
    loop {
        let next = j + dir;
        if next < 0 || next as usize >= y.len() {
            return (j - i as isize).abs() as f64 * step;
        }
        if y[next as usize] < half {
            let frac = (y[j as usize] - half) / (y[j as usize] - y[next as usize]);
            return ((j - i as isize).abs() as f64 + frac) * step;
        }
        j = next;
    }
}

/// Greedy matching within `tol` degrees, processed in descending true-peak
/// height; each peak used at most once.
pub fn match_peaks(
    pred: &[PeakMeasurement],
    truth: &[PeakMeasurement],
    tol: f64,
) -> Vec<(PeakMeasurement, PeakMeasurement)> {
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| {
        truth[b]
            .height
            .partial_cmp(&truth[a].height)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut used = vec![false; pred.len()];
    let mut pairs = Vec::new();
    for t in order {
        let best = (0..pred.len())
            .filter(|&p| !used[p])
            .map(|p| (p, (pred[p].position - truth[t].position).abs()))
            .filter(|&(_, d)| d <= tol)
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if let Some((p, _)) = best {
            used[p] = true;
            pairs.push((pred[p], truth[t]));
        }
    }
    pairs.sort_by(|a, b| a.1.position.partial_cmp(&b.1.position).unwrap());
    pairs
}

/// (mean |delta position|, mean |delta FWHM|) in degrees over matched pairs;
/// None when nothing matched.
pub fn peak_metrics(pairs: &[(PeakMeasurement, PeakMeasurement)]) -> Option<(f64, f64)> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let shift = pairs
        .iter()
        .map(|(p, t)| (p.position - t.position).abs())
        .sum::<f64>()
        / n;
    let width = pairs
        .iter()
        .map(|(p, t)| (p.fwhm - t.fwhm).abs())
        .sum::<f64>()
        / n;
    Some((shift, width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::Grid;
    use crate::sim::{voigt_profile, ProfileMode};

    fn voigt_pattern(centers: &[(f64, f64)]) -> DiffractionPattern {
        let grid = Grid::new(10.0, 0.02, 3500);
        let mut y = vec![0.0; grid.len];
        for &(c, fwhm) in centers {
            let profile = voigt_profile(c, fwhm, grid, ProfileMode::PseudoVoigt).unwrap();
            for (v, p) in y.iter_mut().zip(profile) {
                *v += p;
            }
        }
        DiffractionPattern::new(grid, y).unwrap()
    }

    #[test]
    fn single_voigt_recovered_within_tolerance() {
        let p = voigt_pattern(&[(40.0, 0.3)]);
        let peaks = detect_peaks(&p, 0.05, 0.2);
        assert_eq!(peaks.len(), 1);
        assert!((peaks[0].position - 40.0).abs() < 0.005);
        assert!((peaks[0].fwhm - 0.3).abs() <= 0.02 + 1e-12);
    }

    #[test]
    fn flat_pattern_gives_no_peaks() {
        let grid = Grid::new(10.0, 0.02, 100);
        let p = DiffractionPattern::zeros(grid);
        assert!(detect_peaks(&p, 0.05, 0.2).is_empty());
    }

    #[test]
    fn two_separated_voigts_both_found() {
        let p = voigt_pattern(&[(35.0, 0.3), (40.0, 0.3)]);
        let peaks = detect_peaks(&p, 0.05, 0.2);
        assert_eq!(peaks.len(), 2);
        assert!((peaks[0].position - 35.0).abs() < 0.01);
        assert!((peaks[1].position - 40.0).abs() < 0.01);
    }

    #[test]
    fn min_separation_suppresses_shoulder_maxima() {
        let p = voigt_pattern(&[(40.0, 0.3), (40.05, 0.3)]);
        let peaks = detect_peaks(&p, 0.05, 0.2);
        assert_eq!(peaks.len(), 1);
    }

    #[test]
    fn identical_lists_match_exactly() {
        let p = voigt_pattern(&[(35.0, 0.3), (40.0, 0.4)]);
        let peaks = detect_peaks(&p, 0.05, 0.2);
        let pairs = match_peaks(&peaks, &peaks, 0.5);
        assert_eq!(pairs.len(), peaks.len());
        let (shift, width) = peak_metrics(&pairs).unwrap();
        assert_eq!(shift, 0.0);
        assert_eq!(width, 0.0);
    }

    #[test]
    fn uniform_shift_is_measured() {
        let truth = voigt_pattern(&[(35.0, 0.3), (40.0, 0.3), (45.0, 0.3)]);
        let shifted = voigt_pattern(&[(35.02, 0.3), (40.02, 0.3), (45.02, 0.3)]);
        let tp = detect_peaks(&truth, 0.05, 0.2);
        let pp = detect_peaks(&shifted, 0.05, 0.2);
        let pairs = match_peaks(&pp, &tp, 0.5);
        assert_eq!(pairs.len(), 3);
        let (shift, _) = peak_metrics(&pairs).unwrap();
        assert!((shift - 0.02).abs() < 1e-6);
    }

    #[test]
    fn offsets_beyond_tolerance_do_not_match() {
        let truth = voigt_pattern(&[(35.0, 0.3)]);
        let shifted = voigt_pattern(&[(36.0, 0.3)]);
        let tp = detect_peaks(&truth, 0.05, 0.2);
        let pp = detect_peaks(&shifted, 0.05, 0.2);
        assert!(match_peaks(&pp, &tp, 0.5).is_empty());
    }

    #[test]
    fn fwhm_pair_arithmetic() {
        let a = PeakMeasurement {
            position: 40.0,
            height: 1.0,
            fwhm: 0.3,
        };
        let b = PeakMeasurement {
            position: 40.0,
            height: 1.0,
            fwhm: 0.4,
        };
        let (shift, width) = peak_metrics(&[(a, b)]).unwrap();
        assert_eq!(shift, 0.0);
        assert!((width - 0.1).abs() < 1e-12);
    }

    #[test]
    fn no_matches_is_undefined() {
        assert!(peak_metrics(&[]).is_none());
    }
}
