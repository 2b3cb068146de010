//! Peak detection and matching: find peaks with sub-grid refinement,
//! measure widths at half maximum, and score a prediction against truth.
//!
//! Run with: cargo run --example peak_analysis

use xdecomposer::eval::{detect_peaks, match_peaks, peak_metrics};
use xdecomposer::pattern::{DiffractionPattern, Grid};
use xdecomposer::sim::{voigt_profile, ProfileMode};

fn main() {
    let grid = Grid::from_range(10.0, 40.0, 0.02);

    let render = |peaks: &[(f64, f64, f64)]| -> Vec<f64> {
        let mut v = vec![0.0; grid.len];
        for &(c, h, w) in peaks {
            let p = voigt_profile(c, w, grid, ProfileMode::PseudoVoigt).unwrap();
            for (a, b) in v.iter_mut().zip(&p) {
                *a += h * b * w;
            }
        }
        v
    };

    let truth = render(&[(15.03, 1.0, 0.20), (22.57, 0.6, 0.15), (31.10, 0.8, 0.25)]);
    // prediction: slightly shifted and broadened
    let pred = render(&[(15.05, 0.9, 0.24), (22.60, 0.55, 0.18), (31.08, 0.85, 0.27)]);
    let truth = DiffractionPattern::new(grid, truth).unwrap();
    let pred = DiffractionPattern::new(grid, pred).unwrap();

    let truth_peaks = detect_peaks(&truth, 0.05, 0.2);
    let pred_peaks = detect_peaks(&pred, 0.05, 0.2);
    println!("detected peaks (truth):");
    for p in &truth_peaks {
        println!("  2theta {:.3}  height {:.3}  fwhm {:.3}", p.position, p.height, p.fwhm);
    }
    println!("detected peaks (prediction):");
    for p in &pred_peaks {
        println!("  2theta {:.3}  height {:.3}  fwhm {:.3}", p.position, p.height, p.fwhm);
    }

    let pairs = match_peaks(&pred_peaks, &truth_peaks, 0.5);
    println!("\nmatched {} of {} true peaks", pairs.len(), truth_peaks.len());
    if let Some((shift, dfwhm)) = peak_metrics(&pairs) {
        println!("mean |position error|: {shift:.4} degrees");
        println!("mean |fwhm error|:     {dfwhm:.4} degrees");
    }
}
