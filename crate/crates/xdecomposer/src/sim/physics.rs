//! Per-reflection intensity factors: structure factor, Lorentz-polarization,
//! Debye-Waller damping, and Scherrer size broadening.

use super::{form_factor, SimError};
use crate::crystal::CrystalStructure;

/// Complex structure factor F = sum_j occ_j f_j(Q) exp(2 pi i (h x + k y + l z)).
pub fn structure_factor(
    structure: &CrystalStructure,
    hkl: [i32; 3],
    q_mag: f64,
) -> Result<(f64, f64), SimError> {
    let mut re = 0.0;
    let mut im = 0.0;
    for site in &structure.sites {
        let f = form_factor(&site.element, q_mag)?;
        let phase = 2.0
            * std::f64::consts::PI
            * (hkl[0] as f64 * site.frac_coords[0]
                + hkl[1] as f64 * site.frac_coords[1]
                + hkl[2] as f64 * site.frac_coords[2]);
        re += site.occupancy * f * phase.cos();
        im += site.occupancy * f * phase.sin();
    }
    Ok((re, im))
}

/// Lorentz-polarization factor L = (1 + cos^2 2theta) / (sin^2 theta cos theta).
pub fn lp_factor(theta_deg: f64) -> Result<f64, SimError> {
    if !(theta_deg > 0.0 && theta_deg < 90.0) {
        return Err(SimError::ThetaOutOfRange(theta_deg));
    }
    let theta = theta_deg.to_radians();
    let two_theta = 2.0 * theta;
    Ok((1.0 + two_theta.cos().powi(2)) / (theta.sin().powi(2) * theta.cos()))
}

/// Isotropic Debye-Waller factor D = exp(-2 B sin^2 theta / lambda^2).
pub fn debye_waller(theta_deg: f64, wavelength: f64, thermal_b: f64) -> f64 {
    let s = theta_deg.to_radians().sin();
    (-2.0 * thermal_b * s * s / (wavelength * wavelength)).exp()
}

/// Debye function phi(x) = (1/x) * integral_0^x t / (e^t - 1) dt.
pub fn debye_phi(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    integrate_adaptive(0.0, x, 1e-8) / x
}

/// t / (e^t - 1), with the series limit at t -> 0.
fn debye_integrand(t: f64) -> f64 {
    if t.abs() < 1e-6 {
        1.0 - t / 2.0 + t * t / 12.0
    } else {
        t / (t.exp() - 1.0)
    }
}

fn simpson(a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    (b - a) / 6.0 * (debye_integrand(a) + 4.0 * debye_integrand(m) + debye_integrand(b))
}

fn integrate_adaptive(a: f64, b: f64, rel_tol: f64) -> f64 {
    fn recurse(a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(a, m);
        let right = simpson(m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol * whole.abs().max(1e-300) {
            left + right + delta / 15.0
        } else {
            recurse(a, m, left, tol / 2.0, depth - 1)
                + recurse(m, b, right, tol / 2.0, depth - 1)
        }
    }
    recurse(a, b, simpson(a, b), rel_tol, 40)
}

const PLANCK: f64 = 6.62607015e-34; // J s
const BOLTZMANN: f64 = 1.380649e-23; // J / K
const AMU: f64 = 1.66053906660e-27; // kg

/// Debye-model thermal exponent M so that D = exp(-2M):
/// M = (6 h^2 T / (m k Theta^2)) (phi(Theta/T) + Theta/(4T)) sin^2 theta / lambda^2,
/// with lambda in Angstrom (converted to meters internally).
pub fn debye_temperature_exponent(
    temperature: f64,
    debye_temp: f64,
    mass_amu: f64,
    theta_deg: f64,
    wavelength: f64,
) -> Result<f64, SimError> {
    if temperature <= 0.0 {
        return Err(SimError::NonPositiveInput("temperature".into()));
    }
    if debye_temp <= 0.0 {
        return Err(SimError::NonPositiveInput("debye temperature".into()));
    }
    if mass_amu <= 0.0 {
        return Err(SimError::NonPositiveInput("mass".into()));
    }
    let x = debye_temp / temperature;
    let prefactor = 6.0 * PLANCK * PLANCK * temperature
        / (mass_amu * AMU * BOLTZMANN * debye_temp * debye_temp);
    let s = theta_deg.to_radians().sin();
    let lambda_m = wavelength * 1e-10;
    Ok(prefactor * (debye_phi(x) + x / 4.0) * s * s / (lambda_m * lambda_m))
}

/// Scherrer FWHM in degrees: (180/pi) K lambda / (D cos theta), K = 0.9.
pub fn scherrer_fwhm(crystallite_size_nm: f64, wavelength: f64, theta_deg: f64) -> f64 {
    const K: f64 = 0.9;
    let lambda_nm = wavelength * 0.1;
    (180.0 / std::f64::consts::PI) * K * lambda_nm
        / (crystallite_size_nm * theta_deg.to_radians().cos())
}
