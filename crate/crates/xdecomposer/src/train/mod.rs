//! Two-stage optimization: masked-reconstruction pretraining followed by
//! permutation-invariant decomposition training.

mod loss;
mod optim;
mod run;

pub use loss::{
    assign_min, loss_separation, loss_total, pit_match, pretrain_loss, LossBreakdown, PitMatch,
};
pub use optim::{lr_at, AdamW, Ema};
pub use run::{run_stage1, run_stage2, Stage2Report, StageReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("length mismatch: prediction {pred}, target {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("{k} targets exceed {k_max} slots")]
    KExceedsKmax { k: usize, k_max: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Autograd(#[from] crate::autograd::AutogradError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Weights of the individual loss terms; all must be non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Peak-emphasis weight on the amplitude term.
    pub alpha_amp: f64,
    pub lambda_shape: f64,
    /// Second-difference weight inside the geometry term.
    pub beta_geo: f64,
    pub lambda_geo: f64,
    pub lambda_act: f64,
    pub lambda_mix: f64,
    pub lambda_shape_pre: f64,
    pub lambda_geo_pre: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_amp: 2.0,
            lambda_shape: 0.1,
            beta_geo: 0.5,
            lambda_geo: 1.0,
            lambda_act: 0.5,
            lambda_mix: 1.0,
            lambda_shape_pre: 0.1,
            lambda_geo_pre: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        let all = [
            self.alpha_amp,
            self.lambda_shape,
            self.beta_geo,
            self.lambda_geo,
            self.lambda_act,
            self.lambda_mix,
            self.lambda_shape_pre,
            self.lambda_geo_pre,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TrainError::InvalidConfig(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Optimization settings for one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub ema_decay: f64,
    /// Stage II: freeze the global-context encoder and its input projection.
    pub freeze_global_encoder: bool,
    /// Stage I: restrict the reconstruction loss to masked patches.
    pub masked_only: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn stage1_defaults() -> Self {
        TrainConfig {
            lr: 5e-4,
            weight_decay: 0.05,
            batch_size: 8,
            epochs: 20,
            warmup_epochs: 2,
            ema_decay: 0.999,
            freeze_global_encoder: false,
            masked_only: false,
            seed: 0,
        }
    }

    pub fn stage2_defaults() -> Self {
        TrainConfig {
            lr: 2e-4,
            freeze_global_encoder: true,
            ..Self::stage1_defaults()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(TrainError::InvalidConfig("lr must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(TrainError::InvalidConfig(
                "warmup must be shorter than the run".into(),
            ));
        }
        if !(0.0 < self.ema_decay && self.ema_decay < 1.0) {
            return Err(TrainError::InvalidConfig(
                "ema_decay must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights_are_valid() {
        LossWeights::default().validate().unwrap();
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            lambda_mix: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn stage_defaults_differ_as_documented() {
        let s1 = TrainConfig::stage1_defaults();
        let s2 = TrainConfig::stage2_defaults();
        s1.validate().unwrap();
        s2.validate().unwrap();
        assert!(s2.lr < s1.lr);
        assert!(!s1.freeze_global_encoder);
        assert!(s2.freeze_global_encoder);
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = TrainConfig::stage1_defaults();
        c.warmup_epochs = c.epochs;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::stage1_defaults();
        c.ema_decay = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::stage1_defaults();
        c.lr = 0.0;
        assert!(c.validate().is_err());
    }
}
