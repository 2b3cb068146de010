//! Full pattern rendering: reflections -> per-peak intensities -> profiles ->
//! instrument kernels -> background, zero shift, noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    debye_waller, lp_factor, scherrer_fwhm, structure_factor, voigt_profile, SimConfig, SimError,
};
use crate::crystal::{enumerate_reflections, CrystalStructure};
use crate::pattern::DiffractionPattern;

/// Pre-convolution per-reflection record: (angle, integrated intensity, FWHM).
#[derive(Debug, Clone, PartialEq)]
pub struct PeakEntry {
    pub two_theta: f64,
    pub integrated_intensity: f64,
    pub fwhm: f64,
}

pub type PeakList = Vec<PeakEntry>;

/// FNV-1a over the structure id, mixed with the config seed so each render
/// owns a private deterministic RNG stream.
fn stream_seed(seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Standard normal via Box-Muller, so the only RNG dependency is uniform draws.
pub(crate) fn sample_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// March-Dollase preferred-orientation correction for the reflection `hkl`
/// against the configured axis: (r^2 cos^2 a + sin^2 a / r)^(-3/2).
fn march_dollase(
    structure: &CrystalStructure,
    hkl: [i32; 3],
    axis: [i32; 3],
    r: f64,
) -> Result<f64, SimError> {
    let gstar = structure.lattice.reciprocal_metric()?;
    let dot = |u: [i32; 3], v: [i32; 3]| -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                acc += u[i] as f64 * gstar[i][j] * v[j] as f64;
            }
        }
        acc
    };
    let num = dot(hkl, axis);
    let den = (dot(hkl, hkl) * dot(axis, axis)).sqrt();
    let cos_a = (num / den).clamp(-1.0, 1.0);
    let sin2 = 1.0 - cos_a * cos_a;
    Ok((r * r * cos_a * cos_a + sin2 / r).powf(-1.5))
}

/// Degree-`order` polynomial background on [0,1], offset to min 0 and scaled
/// so its maximum equals `amplitude`.
fn polynomial_background(rng: &mut impl Rng, len: usize, order: usize, amplitude: f64) -> Vec<f64> {
    let coeffs: Vec<f64> = (0..=order).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut bg: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / (len.max(2) - 1) as f64;
            let mut acc = 0.0;
            let mut pw = 1.0;
            for c in &coeffs {
                acc += c * pw;
                pw *= t;
            }
            acc
        })
        .collect();
    let min = bg.iter().cloned().fold(f64::INFINITY, f64::min);
    for v in &mut bg {
        *v -= min;
    }
    let max = bg.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut bg {
            *v *= amplitude / max;
        }
    }
    bg
}

/// Convolve a signal with a short kernel centered at `center` taps from the left.
fn convolve(signal: &[f64], kernel: &[f64], center: usize) -> Vec<f64> {
    let mut out = vec![0.0; signal.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &k) in kernel.iter().enumerate() {
            let idx = i as isize + j as isize - center as isize;
            if idx >= 0 && (idx as usize) < signal.len() {
                acc += k * signal[idx as usize];
            }
        }
        *o = acc;
    }
    out
}

/// Axial-divergence (detector geometry) kernel: a dominant identity tap plus
/// a weak exponential tail of mass TAIL_MASS that smears intensity toward
/// lower angles. Tail width: kappa * atan((H + S) / distance), kappa = 0.5.
/// Mode-preserving by construction, so peak positions stay put.
fn geometry_kernel(cfg: &SimConfig) -> Option<(Vec<f64>, usize)> {
    const KAPPA: f64 = 0.5;
    const TAIL_MASS: f64 = 0.15;
    let width_deg = KAPPA
        * ((cfg.slit_half_height + cfg.sample_half_height) / cfg.detector_distance)
            .atan()
            .to_degrees();
    let width_steps = width_deg / cfg.step;
    if width_steps < 0.25 {
        return None;
    }
    let span = (3.0 * width_steps).ceil() as usize;
    // tap j pulls from signal[i + j]: positive offsets move mass down-angle
    let mut tail: Vec<f64> = (0..=span)
        .map(|j| (-(j as f64) / width_steps).exp())
        .collect();
    let sum: f64 = tail.iter().sum();
    let mut kernel: Vec<f64> = tail
        .drain(..)
        .map(|t| TAIL_MASS * t / sum)
        .collect();
    kernel[0] += 1.0 - TAIL_MASS;
    Some((kernel, 0))
}

/// Narrow Gaussian smoothing kernel (the noise-mixture term of the profile
/// convolution), sigma = 1 grid step.
fn smoothing_kernel() -> (Vec<f64>, usize) {
    let sigma = 1.0;
    let span = 4usize;
    let mut kernel: Vec<f64> = (0..=2 * span)
        .map(|j| {
            let x = j as f64 - span as f64;
            (-0.5 * (x / sigma) * (x / sigma)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    (kernel, span)
}

/// Shift the signal by `shift_deg` via linear interpolation, zero-extending
/// past the grid edges.
fn apply_zero_shift(signal: &[f64], step: f64, shift_deg: f64) -> Vec<f64> {
    if shift_deg == 0.0 {
        return signal.to_vec();
    }
    let shift_steps = shift_deg / step;
    (0..signal.len())
        .map(|i| {
            let src = i as f64 - shift_steps;
            let lo = src.floor();
            let frac = src - lo;
            let lo = lo as isize;
            let sample = |idx: isize| -> f64 {
                if idx >= 0 && (idx as usize) < signal.len() {
                    signal[idx as usize]
                } else {
                    0.0
                }
            };
            (1.0 - frac) * sample(lo) + frac * sample(lo + 1)
        })
        .collect()
}

/// Render a single-phase pattern through the full physics chain.
///
/// Deterministic: a pure function of (structure, cfg) including the seed.
pub fn render_pattern(
    structure: &CrystalStructure,
    cfg: &SimConfig,
) -> Result<(DiffractionPattern, PeakList), SimError> {
    cfg.validate()?;
    let grid = cfg.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &structure.id));

    let reflections = enumerate_reflections(
        structure,
        cfg.wavelength,
        (cfg.two_theta_min, cfg.two_theta_max),
    )?;
    if reflections.is_empty() {
        return Err(SimError::NoReflectionsInRange);
    }

    let mut peaks: PeakList = Vec::with_capacity(reflections.len());
    let mut signal = vec![0.0; grid.len];
    for refl in &reflections {
        let theta = refl.two_theta / 2.0;
        let q = 2.0 * std::f64::consts::PI / refl.d_spacing;
        let (re, im) = structure_factor(structure, refl.hkl, q)?;
        let f2 = re * re + im * im;
        let orientation = if cfg.preferred_orientation.enabled {
            march_dollase(
                structure,
                refl.hkl,
                cfg.preferred_orientation.axis,
                cfg.preferred_orientation.factor,
            )?
        } else {
            1.0
        };
        let intensity = cfg.scale
            * f2
            * lp_factor(theta)?
            * refl.multiplicity as f64
            * orientation
            * debye_waller(theta, cfg.wavelength, cfg.thermal_b);
        let fwhm = scherrer_fwhm(cfg.crystallite_size, cfg.wavelength, theta);
        peaks.push(PeakEntry {
            two_theta: refl.two_theta,
            integrated_intensity: intensity,
            fwhm,
        });
        if intensity <= 0.0 {
            continue;
        }
        let profile = voigt_profile(refl.two_theta, fwhm, grid, cfg.profile)?;
        for (s, p) in signal.iter_mut().zip(&profile) {
            *s += intensity * p;
        }
    }

    if let Some((kernel, center)) = geometry_kernel(cfg) {
        signal = convolve(&signal, &kernel, center);
    }
    let (kernel, center) = smoothing_kernel();
    signal = convolve(&signal, &kernel, center);

    let peak_max = signal.iter().cloned().fold(0.0, f64::max);
    if cfg.background_amplitude > 0.0 {
        let bg = polynomial_background(
            &mut rng,
            grid.len,
            cfg.background_order,
            cfg.background_amplitude * peak_max,
        );
        for (s, b) in signal.iter_mut().zip(&bg) {
            *s += b;
        }
    }

    signal = apply_zero_shift(&signal, cfg.step, cfg.zero_shift);

    if cfg.noise_ratio > 0.0 {
        let sigma = cfg.noise_ratio * signal.iter().cloned().fold(0.0, f64::max);
        for s in &mut signal {
            *s += sigma * sample_normal(&mut rng);
        }
    }
    for s in &mut signal {
        *s = s.max(0.0);
    }

    Ok((DiffractionPattern::new(grid, signal)?, peaks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crystal::{AtomSite, Lattice, SymmetryOp};

    fn cubic_na(a: f64) -> CrystalStructure {
        CrystalStructure::new(
            "cubic_na".into(),
            Lattice::cubic(a),
            vec![AtomSite {
                element: "Na".into(),
                frac_coords: [0.0, 0.0, 0.0],
                occupancy: 1.0,
            }],
            vec![SymmetryOp::identity()],
            Some(1),
        )
        .unwrap()
    }

    fn clean_cfg() -> SimConfig {
        SimConfig {
            background_amplitude: 0.0,
            noise_ratio: 0.0,
            zero_shift: 0.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn peak_near_111_bragg_angle() {
        let (pattern, peaks) = render_pattern(&cubic_na(4.0), &clean_cfg()).unwrap();
        // detected argmax peak nearest the {111} angle
        let expected = 38.97;
        let window = 1.0;
        let grid = pattern.grid;
        let (best, _) = pattern
            .intensities
            .iter()
            .enumerate()
            .filter(|(i, _)| (grid.angle(*i) - expected).abs() < window)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert!(
            (grid.angle(best) - expected).abs() <= 0.02,
            "argmax at {}",
            grid.angle(best)
        );
        assert!(peaks.iter().any(|p| (p.two_theta - expected).abs() < 0.02));
    }

    #[test]
    fn peaklist_satisfies_bragg_relation() {
        let s = cubic_na(4.0);
        let cfg = clean_cfg();
        let (_, peaks) = render_pattern(&s, &cfg).unwrap();
        let refls =
            enumerate_reflections(&s, cfg.wavelength, (cfg.two_theta_min, cfg.two_theta_max))
                .unwrap();
        assert_eq!(peaks.len(), refls.len());
        for (p, r) in peaks.iter().zip(&refls) {
            let lhs = 2.0 * r.d_spacing * (p.two_theta / 2.0).to_radians().sin();
            assert!(((lhs - cfg.wavelength) / cfg.wavelength).abs() < 1e-9);
        }
    }

    #[test]
    fn non_negative_and_zero_far_from_peaks() {
        let (pattern, peaks) = render_pattern(&cubic_na(4.0), &clean_cfg()).unwrap();
        assert!(pattern.intensities.iter().all(|&v| v >= 0.0));
        let max = pattern.max_intensity();
        for (i, &v) in pattern.intensities.iter().enumerate() {
            let angle = pattern.grid.angle(i);
            let far = peaks
                .iter()
                .all(|p| (angle - p.two_theta).abs() > 10.0 * p.fwhm.max(0.05));
            if far {
                // Lorentzian tails decay slowly; "zero" means negligible
                assert!(v < 2e-2 * max, "residual {v} at {angle}");
            }
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let cfg = SimConfig {
            background_amplitude: 0.1,
            noise_ratio: 0.02,
            zero_shift: 0.1,
            seed: 42,
            ..SimConfig::default()
        };
        let s = cubic_na(4.0);
        let (a, _) = render_pattern(&s, &cfg).unwrap();
        let (b, _) = render_pattern(&s, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_ids_get_different_noise() {
        let cfg = SimConfig {
            noise_ratio: 0.02,
            seed: 42,
            ..SimConfig::default()
        };
        let mut s2 = cubic_na(4.0);
        s2.id = "other".into();
        let (a, _) = render_pattern(&cubic_na(4.0), &cfg).unwrap();
        let (b, _) = render_pattern(&s2, &cfg).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_shift_moves_argmax() {
        let base = clean_cfg();
        let shifted = SimConfig {
            zero_shift: 0.2,
            ..clean_cfg()
        };
        let (a, _) = render_pattern(&cubic_na(4.0), &base).unwrap();
        let (b, _) = render_pattern(&cubic_na(4.0), &shifted).unwrap();
        let argmax = |p: &DiffractionPattern| {
            p.intensities
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&b), argmax(&a) + 10); // 0.2 deg = 10 steps
    }

    #[test]
    fn march_dollase_unity_at_r1() {
        let s = cubic_na(4.0);
        let o = march_dollase(&s, [1, 1, 1], [0, 0, 1], 1.0).unwrap();
        assert!((o - 1.0).abs() < 1e-12);
    }
}
