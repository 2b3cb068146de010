//! Single-phase pattern simulation: the physics chain from crystal structure
//! to rendered diffraction pattern, and superposition into mixtures.

pub mod form_factor;
mod physics;
mod profile;
mod render;

pub use form_factor::form_factor;
pub use physics::{
    debye_temperature_exponent, debye_waller, lp_factor, scherrer_fwhm, structure_factor,
};
pub use profile::{measured_fwhm, voigt_profile, ProfileMode};
pub use render::{render_pattern, PeakEntry, PeakList};
pub(crate) use render::sample_normal;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unsupported element '{0}'")]
    UnsupportedElement(String),
    #[error("theta {0} out of range (0, 90)")]
    ThetaOutOfRange(f64),
    #[error("non-positive input: {0}")]
    NonPositiveInput(String),
    #[error("non-positive fwhm {0}")]
    NonPositiveFwhm(f64),
    #[error("no reflections in the scan range")]
    NoReflectionsInRange,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Crystal(#[from] crate::crystal::CrystalError),
    #[error(transparent)]
    Pattern(#[from] crate::pattern::PatternError),
}

/// March-Dollase preferred-orientation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferredOrientation {
    pub enabled: bool,
    /// March-Dollase r parameter.
    pub factor: f64,
    /// Orientation axis as Miller indices of the preferred plane normal.
    pub axis: [i32; 3],
}

impl Default for PreferredOrientation {
    fn default() -> Self {
        PreferredOrientation {
            enabled: false,
            factor: 0.15,
            axis: [0, 0, 1],
        }
    }
}

/// All knobs of the simulated physics chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// X-ray wavelength in Angstrom (Cu K-alpha by default).
    pub wavelength: f64,
    pub two_theta_min: f64,
    pub two_theta_max: f64,
    pub step: f64,
    /// Crystallite size in nm, drives Scherrer broadening.
    pub crystallite_size: f64,
    /// Isotropic thermal vibration coefficient B in A^2.
    pub thermal_b: f64,
    /// Instrument 2-theta offset in degrees.
    pub zero_shift: f64,
    /// Specimen-detector distance in mm (axial divergence kernel).
    pub detector_distance: f64,
    pub slit_half_height: f64,
    pub sample_half_height: f64,
    pub background_order: usize,
    /// Background maximum as a fraction of the maximum peak intensity.
    pub background_amplitude: f64,
    /// White-noise std as a fraction of the pattern maximum.
    pub noise_ratio: f64,
    pub preferred_orientation: PreferredOrientation,
    /// Overall scale factor S.
    pub scale: f64,
    pub profile: ProfileMode,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            wavelength: 1.5406,
            two_theta_min: 10.0,
            two_theta_max: 80.0,
            step: 0.02,
            crystallite_size: 50.0,
            thermal_b: 0.05,
            zero_shift: 0.0,
            detector_distance: 450.0,
            slit_half_height: 5.0,
            sample_half_height: 2.0,
            background_order: 6,
            background_amplitude: 0.0,
            noise_ratio: 0.0,
            preferred_orientation: PreferredOrientation::default(),
            scale: 1.0,
            profile: ProfileMode::PseudoVoigt,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn grid(&self) -> crate::pattern::Grid {
        crate::pattern::Grid::from_range(self.two_theta_min, self.two_theta_max, self.step)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.step <= 0.0 {
            return Err(SimError::InvalidConfig("step must be positive".into()));
        }
        let width = self.two_theta_max - self.two_theta_min;
        if width <= 0.0 {
            return Err(SimError::InvalidConfig("empty scan range".into()));
        }
        let n = width / self.step;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(SimError::InvalidConfig(
                "range width must be divisible by step".into(),
            ));
        }
        if self.wavelength <= 0.0 {
            return Err(SimError::InvalidConfig("wavelength must be positive".into()));
        }
        if self.crystallite_size <= 0.0 {
            return Err(SimError::InvalidConfig(
                "crystallite size must be positive".into(),
            ));
        }
        if self.thermal_b < 0.0 || self.noise_ratio < 0.0 || self.background_amplitude < 0.0 {
            return Err(SimError::InvalidConfig("negative noise/background".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_config_has_3500_point_grid() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid().len, 3500);
    }

    #[test]
    fn misaligned_step_rejected() {
        let cfg = SimConfig {
            step: 0.03,
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
