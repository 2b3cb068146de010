//! Estimate and subtract a smooth background from a noisy pattern with the
//! iterative clipping filter.
//!
//! Run with: cargo run --example background_removal

use xdecomposer::data::{snip_background, SnipSchedule, SNIP_DEFAULT_M};
use xdecomposer::pattern::{DiffractionPattern, Grid};
use xdecomposer::sim::{voigt_profile, ProfileMode};

fn main() {
    let grid = Grid::from_range(10.0, 60.0, 0.02);

    // three peaks on a sloping polynomial background
    let mut truth_bg = vec![0.0; grid.len];
    for (i, b) in truth_bg.iter_mut().enumerate() {
        let t = i as f64 / (grid.len - 1) as f64;
        *b = 0.08 * (1.0 - t) + 0.03 * t * t;
    }
    let mut signal = vec![0.0; grid.len];
    for (c, h, w) in [(18.0, 1.0, 0.15), (32.5, 0.6, 0.2), (47.0, 0.8, 0.12)] {
        let profile = voigt_profile(c, w, grid, ProfileMode::PseudoVoigt).unwrap();
        for (s, p) in signal.iter_mut().zip(&profile) {
            *s += h * p * w; // scale unit-integral profile to peak height ~h
        }
    }
    let observed: Vec<f64> = signal
        .iter()
        .zip(&truth_bg)
        .map(|(s, b)| s + b)
        .collect();
    let pattern = DiffractionPattern::new(grid, observed).unwrap();

    let estimate = snip_background(&pattern, SNIP_DEFAULT_M, SnipSchedule::Increasing).unwrap();

    // report accuracy away from the peaks
    let peak_centers = [18.0, 32.5, 47.0];
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for i in 0..grid.len {
        let angle = grid.angle(i);
        if peak_centers.iter().all(|c| (angle - c).abs() > 1.0) {
            worst = worst.max((estimate[i] - truth_bg[i]).abs() / truth_bg[i].max(1e-9));
            n += 1;
        }
    }
    println!("grid points: {}, checked off-peak: {n}", grid.len);
    println!("worst off-peak relative background error: {:.3}%", 100.0 * worst);

    let corrected: Vec<f64> = pattern
        .intensities
        .iter()
        .zip(&estimate)
        .map(|(v, b)| (v - b).max(0.0))
        .collect();
    let residual_floor = corrected
        .iter()
        .enumerate()
        .filter(|(i, _)| peak_centers.iter().all(|c| (grid.angle(*i) - c).abs() > 1.0))
        .map(|(_, v)| *v)
        .fold(0.0f64, f64::max);
    println!("largest off-peak residual after subtraction: {residual_floor:.4}");
}
