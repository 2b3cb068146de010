//! Run configuration: one key=value file covering simulation, data, model,
//! training, and evaluation settings. Unknown keys are rejected; every run
//! writes back a resolved snapshot.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::ModelConfig;
use crate::sim::SimConfig;
use crate::train::{LossWeights, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("malformed config line {0}: '{1}'")]
    Malformed(usize, String),
    #[error("bad value for '{0}': {1}")]
    BadValue(String, String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-render sampling ranges for the simulated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSection {
    pub base: SimConfig,
    /// Patterns rendered per parsed structure.
    pub n_per_crystal: usize,
    pub crystallite_size: RangeInclusive<f64>,
    pub thermal_b: RangeInclusive<f64>,
    pub zero_shift: RangeInclusive<f64>,
    pub background_amplitude: RangeInclusive<f64>,
    pub detector_distance: RangeInclusive<f64>,
    pub slit_half_height: RangeInclusive<f64>,
    pub sample_half_height: RangeInclusive<f64>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            base: SimConfig {
                noise_ratio: 0.02,
                ..SimConfig::default()
            },
            n_per_crystal: 20,
            crystallite_size: 10.0..=120.0,
            thermal_b: 0.01..=0.2,
            zero_shift: 0.0..=0.2,
            background_amplitude: 0.0..=0.1,
            detector_distance: 300.0..=600.0,
            slit_half_height: 3.0..=8.0,
            sample_half_height: 1.0..=4.0,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, range: &RangeInclusive<f64>) -> f64 {
    if range.start() == range.end() {
        *range.start()
    } else {
        rng.gen_range(*range.start()..=*range.end())
    }
}

impl SimSection {
    /// One concrete render config with per-render parameters drawn from the
    /// configured ranges.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> SimConfig {
        SimConfig {
            crystallite_size: draw(rng, &self.crystallite_size),
            thermal_b: draw(rng, &self.thermal_b),
            zero_shift: draw(rng, &self.zero_shift),
            background_amplitude: draw(rng, &self.background_amplitude),
            detector_distance: draw(rng, &self.detector_distance),
            slit_half_height: draw(rng, &self.slit_half_height),
            sample_half_height: draw(rng, &self.sample_half_height),
            seed: rng.gen(),
            ..self.base.clone()
        }
    }
}

/// Mixing and split settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub mix: crate::data::MixConfig,
    pub ratios: [f64; 3],
    pub mixtures_per_epoch: usize,
    pub snip_iterations: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            mix: crate::data::MixConfig::default(),
            ratios: [0.8, 0.1, 0.1],
            mixtures_per_epoch: 64,
            snip_iterations: crate::data::SNIP_DEFAULT_M,
        }
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub candidates: usize,
    pub n_mixtures: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            candidates: crate::eval::DEFAULT_CANDIDATES,
            n_mixtures: 32,
        }
    }
}

/// Everything one run needs, resolvable back to a snapshot file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimSection,
    pub data: DataSection,
    pub model: ModelConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub loss: LossWeights,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        // default scan range sized so the toy model's input length matches
        // the grid exactly: 10.00..20.24 at 0.02 degrees = 512 points
        let mut sim = SimSection::default();
        sim.base.two_theta_max = 20.24;
        RunConfig {
            seed: 0,
            sim,
            data: DataSection::default(),
            model: ModelConfig::toy(),
            stage1: TrainConfig::stage1_defaults(),
            stage2: TrainConfig::stage2_defaults(),
            loss: LossWeights::default(),
            eval: EvalSection::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError::BadValue(key.to_string(), value.to_string()))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(ConfigError::BadValue(key.to_string(), value.to_string())),
    }
}

impl RunConfig {
    /// Parse a key=value config file over the defaults. Unknown keys are
    /// rejected, except the documented accepted-and-ignored ones, which are
    /// returned as warnings.
    pub fn from_text(text: &str) -> Result<(Self, Vec<String>), ConfigError> {
        let mut cfg = RunConfig::default();
        let mut warnings = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Malformed(ln + 1, raw.to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(key, value, &mut warnings)?;
        }
        cfg.validate()?;
        Ok((cfg, warnings))
    }

    fn apply(&mut self, key: &str, value: &str, warnings: &mut Vec<String>) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse(key, value)?,

            "sim.wavelength" => self.sim.base.wavelength = parse(key, value)?,
            "sim.two_theta_min" => self.sim.base.two_theta_min = parse(key, value)?,
            "sim.two_theta_max" => self.sim.base.two_theta_max = parse(key, value)?,
            "sim.step" => self.sim.base.step = parse(key, value)?,
            "sim.n_per_crystal" => self.sim.n_per_crystal = parse(key, value)?,
            "sim.noise_ratio" => self.sim.base.noise_ratio = parse(key, value)?,
            "sim.scale" => self.sim.base.scale = parse(key, value)?,
            "sim.preferred_orientation" => {
                self.sim.base.preferred_orientation.enabled = parse_bool(key, value)?
            }
            "sim.march_dollase_r" => {
                self.sim.base.preferred_orientation.factor = parse(key, value)?
            }
            "sim.crystallite_size_min" => {
                self.sim.crystallite_size = parse(key, value)?..=*self.sim.crystallite_size.end()
            }
            "sim.crystallite_size_max" => {
                self.sim.crystallite_size = *self.sim.crystallite_size.start()..=parse(key, value)?
            }
            "sim.thermal_b_min" => {
                self.sim.thermal_b = parse(key, value)?..=*self.sim.thermal_b.end()
            }
            "sim.thermal_b_max" => {
                self.sim.thermal_b = *self.sim.thermal_b.start()..=parse(key, value)?
            }
            "sim.zero_shift_min" => {
                self.sim.zero_shift = parse(key, value)?..=*self.sim.zero_shift.end()
            }
            "sim.zero_shift_max" => {
                self.sim.zero_shift = *self.sim.zero_shift.start()..=parse(key, value)?
            }
            "sim.background_amplitude_min" => {
                self.sim.background_amplitude =
                    parse(key, value)?..=*self.sim.background_amplitude.end()
            }
            "sim.background_amplitude_max" => {
                self.sim.background_amplitude =
                    *self.sim.background_amplitude.start()..=parse(key, value)?
            }
            "sim.detector_distance_min" => {
                self.sim.detector_distance = parse(key, value)?..=*self.sim.detector_distance.end()
            }
            "sim.detector_distance_max" => {
                self.sim.detector_distance =
                    *self.sim.detector_distance.start()..=parse(key, value)?
            }
            "sim.slit_half_height_min" => {
                self.sim.slit_half_height = parse(key, value)?..=*self.sim.slit_half_height.end()
            }
            "sim.slit_half_height_max" => {
                self.sim.slit_half_height = *self.sim.slit_half_height.start()..=parse(key, value)?
            }
            "sim.sample_half_height_min" => {
                self.sim.sample_half_height =
                    parse(key, value)?..=*self.sim.sample_half_height.end()
            }
            "sim.sample_half_height_max" => {
                self.sim.sample_half_height =
                    *self.sim.sample_half_height.start()..=parse(key, value)?
            }
            // listed in the source material without a formula; accepted so
            // existing configs load, but they have no effect
            "sim.extinction" | "sim.torsion" => {
                warnings.push(format!("config key '{key}' is accepted but ignored"));
            }

            "data.alpha" => self.data.mix.alpha = parse(key, value)?,
            "data.weight_floor" => self.data.mix.weight_floor = parse(key, value)?,
            "data.noise_sigma" => self.data.mix.noise_sigma = parse(key, value)?,
            "data.ratio_train" => self.data.ratios[0] = parse(key, value)?,
            "data.ratio_val" => self.data.ratios[1] = parse(key, value)?,
            "data.ratio_test" => self.data.ratios[2] = parse(key, value)?,
            "data.mixtures_per_epoch" => self.data.mixtures_per_epoch = parse(key, value)?,
            "data.snip_iterations" => self.data.snip_iterations = parse(key, value)?,

            "model.scale" => {
                self.model = match value {
                    "toy" => ModelConfig::toy(),
                    "paper" => ModelConfig::paper(),
                    _ => return Err(ConfigError::BadValue(key.into(), value.into())),
                }
            }
            "model.l" => self.model.l = parse(key, value)?,
            "model.d_model" => self.model.d_model = parse(key, value)?,
            "model.n_heads" => self.model.n_heads = parse(key, value)?,
            "model.n_layers" => self.model.n_layers = parse(key, value)?,
            "model.k_max" => self.model.k_max = parse(key, value)?,
            "model.patch_size" => self.model.patch_size = parse(key, value)?,
            "model.patch_stride" => self.model.patch_stride = parse(key, value)?,
            "model.mask_ratio" => self.model.mask_ratio = parse(key, value)?,
            "model.tau" => self.model.tau = parse(key, value)?,
            "model.skip_fusion" => self.model.skip_fusion = parse_bool(key, value)?,

            "stage1.lr" => self.stage1.lr = parse(key, value)?,
            "stage1.epochs" => self.stage1.epochs = parse(key, value)?,
            "stage1.batch_size" => self.stage1.batch_size = parse(key, value)?,
            "stage1.warmup_epochs" => self.stage1.warmup_epochs = parse(key, value)?,
            "stage1.weight_decay" => self.stage1.weight_decay = parse(key, value)?,
            "stage1.masked_only" => self.stage1.masked_only = parse_bool(key, value)?,

            "stage2.lr" => self.stage2.lr = parse(key, value)?,
            "stage2.epochs" => self.stage2.epochs = parse(key, value)?,
            "stage2.batch_size" => self.stage2.batch_size = parse(key, value)?,
            "stage2.warmup_epochs" => self.stage2.warmup_epochs = parse(key, value)?,
            "stage2.weight_decay" => self.stage2.weight_decay = parse(key, value)?,
            "stage2.ema_decay" => self.stage2.ema_decay = parse(key, value)?,
            "stage2.freeze_global_encoder" => {
                self.stage2.freeze_global_encoder = parse_bool(key, value)?
            }

            "loss.alpha_amp" => self.loss.alpha_amp = parse(key, value)?,
            "loss.lambda_shape" => self.loss.lambda_shape = parse(key, value)?,
            "loss.beta_geo" => self.loss.beta_geo = parse(key, value)?,
            "loss.lambda_geo" => self.loss.lambda_geo = parse(key, value)?,
            "loss.lambda_act" => self.loss.lambda_act = parse(key, value)?,
            "loss.lambda_mix" => self.loss.lambda_mix = parse(key, value)?,
            "loss.lambda_shape_pre" => self.loss.lambda_shape_pre = parse(key, value)?,
            "loss.lambda_geo_pre" => self.loss.lambda_geo_pre = parse(key, value)?,

            "eval.candidates" => self.eval.candidates = parse(key, value)?,
            "eval.n_mixtures" => self.eval.n_mixtures = parse(key, value)?,

            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim
            .base
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.stage1
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.stage2
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.loss
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let grid = self.sim.base.grid();
        if grid.len != self.model.l {
            return Err(ConfigError::Invalid(format!(
                "scan grid has {} points but the model expects {}",
                grid.len, self.model.l
            )));
        }
        Ok(())
    }

    /// Resolved snapshot: every effective key, parseable by `from_text`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "seed = {}", self.seed);
        let _ = writeln!(w, "sim.wavelength = {}", self.sim.base.wavelength);
        let _ = writeln!(w, "sim.two_theta_min = {}", self.sim.base.two_theta_min);
        let _ = writeln!(w, "sim.two_theta_max = {}", self.sim.base.two_theta_max);
        let _ = writeln!(w, "sim.step = {}", self.sim.base.step);
        let _ = writeln!(w, "sim.n_per_crystal = {}", self.sim.n_per_crystal);
        let _ = writeln!(w, "sim.noise_ratio = {}", self.sim.base.noise_ratio);
        let _ = writeln!(w, "sim.scale = {}", self.sim.base.scale);
        let _ = writeln!(
            w,
            "sim.preferred_orientation = {}",
            self.sim.base.preferred_orientation.enabled
        );
        let _ = writeln!(
            w,
            "sim.march_dollase_r = {}",
            self.sim.base.preferred_orientation.factor
        );
        let ranges = [
            ("crystallite_size", &self.sim.crystallite_size),
            ("thermal_b", &self.sim.thermal_b),
            ("zero_shift", &self.sim.zero_shift),
            ("background_amplitude", &self.sim.background_amplitude),
            ("detector_distance", &self.sim.detector_distance),
            ("slit_half_height", &self.sim.slit_half_height),
            ("sample_half_height", &self.sim.sample_half_height),
        ];
        for (name, r) in ranges {
            let _ = writeln!(w, "sim.{name}_min = {}", r.start());
            let _ = writeln!(w, "sim.{name}_max = {}", r.end());
        }
        let _ = writeln!(w, "data.alpha = {}", self.data.mix.alpha);
        let _ = writeln!(w, "data.weight_floor = {}", self.data.mix.weight_floor);
        let _ = writeln!(w, "data.noise_sigma = {}", self.data.mix.noise_sigma);
        let _ = writeln!(w, "data.ratio_train = {}", self.data.ratios[0]);
        let _ = writeln!(w, "data.ratio_val = {}", self.data.ratios[1]);
        let _ = writeln!(w, "data.ratio_test = {}", self.data.ratios[2]);
        let _ = writeln!(w, "data.mixtures_per_epoch = {}", self.data.mixtures_per_epoch);
        let _ = writeln!(w, "data.snip_iterations = {}", self.data.snip_iterations);
        let _ = writeln!(w, "model.l = {}", self.model.l);
        let _ = writeln!(w, "model.d_model = {}", self.model.d_model);
        let _ = writeln!(w, "model.n_heads = {}", self.model.n_heads);
        let _ = writeln!(w, "model.n_layers = {}", self.model.n_layers);
        let _ = writeln!(w, "model.k_max = {}", self.model.k_max);
        let _ = writeln!(w, "model.patch_size = {}", self.model.patch_size);
        let _ = writeln!(w, "model.patch_stride = {}", self.model.patch_stride);
        let _ = writeln!(w, "model.mask_ratio = {}", self.model.mask_ratio);
        let _ = writeln!(w, "model.tau = {}", self.model.tau);
        let _ = writeln!(w, "model.skip_fusion = {}", self.model.skip_fusion);
        for (name, t) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            let _ = writeln!(w, "{name}.lr = {}", t.lr);
            let _ = writeln!(w, "{name}.epochs = {}", t.epochs);
            let _ = writeln!(w, "{name}.batch_size = {}", t.batch_size);
            let _ = writeln!(w, "{name}.warmup_epochs = {}", t.warmup_epochs);
            let _ = writeln!(w, "{name}.weight_decay = {}", t.weight_decay);
        }
        let _ = writeln!(w, "stage1.masked_only = {}", self.stage1.masked_only);
        let _ = writeln!(w, "stage2.ema_decay = {}", self.stage2.ema_decay);
        let _ = writeln!(
            w,
            "stage2.freeze_global_encoder = {}",
            self.stage2.freeze_global_encoder
        );
        let _ = writeln!(w, "loss.alpha_amp = {}", self.loss.alpha_amp);
        let _ = writeln!(w, "loss.lambda_shape = {}", self.loss.lambda_shape);
        let _ = writeln!(w, "loss.beta_geo = {}", self.loss.beta_geo);
        let _ = writeln!(w, "loss.lambda_geo = {}", self.loss.lambda_geo);
        let _ = writeln!(w, "loss.lambda_act = {}", self.loss.lambda_act);
        let _ = writeln!(w, "loss.lambda_mix = {}", self.loss.lambda_mix);
        let _ = writeln!(w, "loss.lambda_shape_pre = {}", self.loss.lambda_shape_pre);
        let _ = writeln!(w, "loss.lambda_geo_pre = {}", self.loss.lambda_geo_pre);
        let _ = writeln!(w, "eval.candidates = {}", self.eval.candidates);
        let _ = writeln!(w, "eval.n_mixtures = {}", self.eval.n_mixtures);
        out
    }
}
