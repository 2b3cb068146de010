//! The decomposer network: hierarchical conv analyzer, global attention
//! encoder, phase queries with FiLM modulation and spatial competition, mask
//! decoder with skip fusion, and the MAE pretraining head.

mod mae;
mod net;

pub use mae::{mae_pretrain_forward, MaeForward};
pub use net::{
    decompose_forward, decode_masks, encode_global, encode_local, film_modulate, reconstruct,
    slot_attend, spatial_competition, DecompositionResult, Forward, SlotOutputs,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::{AutogradError, NdArray, Tape, Var};

/// Magic bytes of the checkpoint format.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("patch config invalid: {0}")]
    PatchConfigInvalid(String),
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture hyperparameters. `paper()` is the full-scale configuration;
/// `toy()` is the CPU-friendly test scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input pattern length.
    pub l: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub conv_channels: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub k_max: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub mask_ratio: f64,
    /// Activity threshold for the active slot set.
    pub tau: f64,
    /// Multi-scale skip fusion in the decoder (ablation hook).
    pub skip_fusion: bool,
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            l: 3500,
            d_model: 768,
            n_heads: 12,
            n_layers: 4,
            conv_channels: vec![48, 96, 192, 384],
            conv_kernels: vec![15, 8, 8, 10],
            conv_strides: vec![1, 2, 2, 5],
            k_max: 4,
            patch_size: 50,
            patch_stride: 25,
            mask_ratio: 0.70,
            tau: 0.5,
            skip_fusion: true,
        }
    }

    pub fn toy() -> Self {
        ModelConfig {
            l: 512,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            conv_channels: vec![8, 16, 32, 64],
            conv_kernels: vec![15, 8, 8, 8],
            conv_strides: vec![1, 2, 2, 4],
            k_max: 4,
            patch_size: 32,
            patch_stride: 16,
            mask_ratio: 0.70,
            tau: 0.5,
            skip_fusion: true,
        }
    }

    /// Latent sequence length after the conv analyzer.
    pub fn seq_len(&self) -> usize {
        self.l / self.conv_strides.iter().product::<usize>()
    }

    pub fn patch_count(&self) -> usize {
        (self.l - self.patch_size) / self.patch_stride + 1
    }

    pub fn masked_count(&self) -> usize {
        (self.mask_ratio * self.patch_count() as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let stages = self.conv_channels.len();
        if stages == 0
            || self.conv_kernels.len() != stages
            || self.conv_strides.len() != stages
        {
            return Err(ModelError::InvalidConfig(
                "conv channels/kernels/strides must be equal-length and non-empty".into(),
            ));
        }
        let down: usize = self.conv_strides.iter().product();
        if down == 0 || self.l % down != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "stride product {down} must divide L = {}",
                self.l
            )));
        }
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(
                "d_model must be divisible by n_heads".into(),
            ));
        }
        if self.k_max == 0 {
            return Err(ModelError::InvalidConfig("k_max must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(ModelError::InvalidConfig(
                "mask_ratio must be in [0, 1)".into(),
            ));
        }
        if self.l < self.patch_size {
            return Err(ModelError::PatchConfigInvalid(format!(
                "L = {} < patch size {}",
                self.l, self.patch_size
            )));
        }
        if self.patch_stride == 0 || (self.l - self.patch_size) % self.patch_stride != 0 {
            return Err(ModelError::PatchConfigInvalid(
                "patch stride must tile L exactly".into(),
            ));
        }
        Ok(())
    }

    /// key=value text mirror of the config.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "l={}\nd_model={}\nn_heads={}\nn_layers={}\nconv_channels={}\nconv_kernels={}\n\
             conv_strides={}\nk_max={}\npatch_size={}\npatch_stride={}\nmask_ratio={}\ntau={}\n\
             skip_fusion={}\n",
            self.l,
            self.d_model,
            self.n_heads,
            self.n_layers,
            join(&self.conv_channels),
            join(&self.conv_kernels),
            join(&self.conv_strides),
            self.k_max,
            self.patch_size,
            self.patch_stride,
            self.mask_ratio,
            self.tau,
            self.skip_fusion
        )
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut cfg = ModelConfig::toy();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| ModelError::InvalidConfig(format!("bad line '{line}'")))?;
            let bad = || ModelError::InvalidConfig(format!("bad value for '{key}'"));
            let list = |v: &str| -> Result<Vec<usize>, ModelError> {
                v.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
            };
            match key {
                "l" => cfg.l = val.parse().map_err(|_| bad())?,
                "d_model" => cfg.d_model = val.parse().map_err(|_| bad())?,
                "n_heads" => cfg.n_heads = val.parse().map_err(|_| bad())?,
                "n_layers" => cfg.n_layers = val.parse().map_err(|_| bad())?,
                "conv_channels" => cfg.conv_channels = list(val)?,
                "conv_kernels" => cfg.conv_kernels = list(val)?,
                "conv_strides" => cfg.conv_strides = list(val)?,
                "k_max" => cfg.k_max = val.parse().map_err(|_| bad())?,
                "patch_size" => cfg.patch_size = val.parse().map_err(|_| bad())?,
                "patch_stride" => cfg.patch_stride = val.parse().map_err(|_| bad())?,
                "mask_ratio" => cfg.mask_ratio = val.parse().map_err(|_| bad())?,
                "tau" => cfg.tau = val.parse().map_err(|_| bad())?,
                "skip_fusion" => cfg.skip_fusion = val.parse().map_err(|_| bad())?,
                _ => return Err(ModelError::InvalidConfig(format!("unknown key '{key}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Named parameter store. Iteration order (BTreeMap) is part of the
/// determinism contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: BTreeMap<String, NdArray>,
}

/// Per-forward-pass binding of parameter names to tape variables.
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter '{name}'"))
    }

    pub fn var_of(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(|s| s.as_str())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64, n: usize) -> Vec<f64> {
    // Box-Muller
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen::<f64>();
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

impl Model {
    /// Random initialization: Gaussian with std 1/sqrt(fan_in) for weights,
    /// zeros for biases, std 0.02 for the slot queries (symmetry breaking).
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        let d = cfg.d_model;
        let stages = cfg.conv_channels.len();

        let weight = |params: &mut BTreeMap<String, NdArray>,
                          rng: &mut ChaCha8Rng,
                          name: &str,
                          shape: &[usize],
                          fan_in: usize| {
            let n: usize = shape.iter().product();
            let std = 1.0 / (fan_in as f64).sqrt();
            params.insert(name.into(), NdArray::new(shape, gaussian(rng, std, n)).unwrap());
        };
        let zeros = |params: &mut BTreeMap<String, NdArray>, name: &str, shape: &[usize]| {
            params.insert(name.into(), NdArray::zeros(shape));
        };
        let ones = |params: &mut BTreeMap<String, NdArray>, name: &str, shape: &[usize]| {
            let n: usize = shape.iter().product();
            params.insert(name.into(), NdArray::new(shape, vec![1.0; n]).unwrap());
        };
        let linear = |params: &mut BTreeMap<String, NdArray>,
                      rng: &mut ChaCha8Rng,
                      prefix: &str,
                      rows: usize,
                      cols: usize| {
            let n = rows * cols;
            let std = 1.0 / (rows as f64).sqrt();
            params.insert(
                format!("{prefix}.w"),
                NdArray::new(&[rows, cols], gaussian(rng, std, n)).unwrap(),
            );
            params.insert(format!("{prefix}.b"), NdArray::zeros(&[cols]));
        };
        let attention = |params: &mut BTreeMap<String, NdArray>,
                         rng: &mut ChaCha8Rng,
                         prefix: &str| {
            for part in ["wq", "wk", "wv", "wo"] {
                let n = d * d;
                let std = 1.0 / (d as f64).sqrt();
                params.insert(
                    format!("{prefix}.{part}"),
                    NdArray::new(&[d, d], gaussian(rng, std, n)).unwrap(),
                );
                params.insert(format!("{prefix}.{part}b"), NdArray::zeros(&[d]));
            }
        };

        // conv analyzer
        let mut c_prev = 1;
        for i in 0..stages {
            let (c, k) = (cfg.conv_channels[i], cfg.conv_kernels[i]);
            weight(
                &mut params,
                &mut rng,
                &format!("enc.stage{i}.w"),
                &[c, c_prev, k],
                c_prev * k,
            );
            zeros(&mut params, &format!("enc.stage{i}.b"), &[c]);
            c_prev = c;
        }
        linear(&mut params, &mut rng, "enc.proj", c_prev, d);

        // global encoder G (pre-norm transformer)
        for layer in 0..cfg.n_layers {
            let p = format!("g.layer{layer}");
            ones(&mut params, &format!("{p}.ln1.g"), &[d]);
            zeros(&mut params, &format!("{p}.ln1.b"), &[d]);
            attention(&mut params, &mut rng, &format!("{p}.attn"));
            ones(&mut params, &format!("{p}.ln2.g"), &[d]);
            zeros(&mut params, &format!("{p}.ln2.b"), &[d]);
            linear(&mut params, &mut rng, &format!("{p}.mlp.fc1"), d, 4 * d);
            linear(&mut params, &mut rng, &format!("{p}.mlp.fc2"), 4 * d, d);
        }
        ones(&mut params, "g.ln.g", &[d]);
        zeros(&mut params, "g.ln.b", &[d]);

        // slot queries and heads
        params.insert(
            "slots.q".into(),
            NdArray::new(&[cfg.k_max, d], gaussian(&mut rng, 0.02, cfg.k_max * d)).unwrap(),
        );
        attention(&mut params, &mut rng, "slots.attn");
        linear(&mut params, &mut rng, "slots.act", d, 1);
        linear(&mut params, &mut rng, "slots.gamma", d, d);
        linear(&mut params, &mut rng, "slots.beta", d, d);

        // mask decoder (mirror)
        let c_last = *cfg.conv_channels.last().unwrap();
        linear(&mut params, &mut rng, "dec.proj", d, c_last);
        for i in (1..stages).rev() {
            let (c_in, c_out, s) = (
                cfg.conv_channels[i],
                cfg.conv_channels[i - 1],
                cfg.conv_strides[i],
            );
            weight(
                &mut params,
                &mut rng,
                &format!("dec.stage{i}.w"),
                &[c_in, c_out, s],
                c_in * s,
            );
            zeros(&mut params, &format!("dec.stage{i}.b"), &[c_out]);
            weight(
                &mut params,
                &mut rng,
                &format!("dec.fuse{i}.w"),
                &[c_out, 2 * c_out, 1],
                2 * c_out,
            );
            zeros(&mut params, &format!("dec.fuse{i}.b"), &[c_out]);
        }
        let c0 = cfg.conv_channels[0];
        weight(&mut params, &mut rng, "dec.head.w", &[cfg.k_max, c0, 1], c0);
        zeros(&mut params, "dec.head.b", &[cfg.k_max]);

        // MAE pretraining head
        linear(&mut params, &mut rng, "mae.embed", cfg.patch_size, d);
        params.insert(
            "mae.mask_token".into(),
            NdArray::new(&[1, d], gaussian(&mut rng, 0.02, d)).unwrap(),
        );
        attention(&mut params, &mut rng, "mae.dec.attn");
        ones(&mut params, "mae.dec.ln.g", &[d]);
        zeros(&mut params, "mae.dec.ln.b", &[d]);
        linear(&mut params, &mut rng, "mae.head", d, cfg.patch_size);

        Ok(Model { cfg, params })
    }

    /// Bind every parameter onto the tape. Names starting with any prefix in
    /// `frozen_prefixes` become constants (no gradients).
    pub fn bind(&self, tape: &mut Tape, frozen_prefixes: &[&str]) -> Binding {
        let mut vars = BTreeMap::new();
        for (name, value) in &self.params {
            let frozen = frozen_prefixes.iter().any(|p| name.starts_with(p));
            let var = if frozen {
                tape.constant(value.clone())
            } else {
                tape.param(value.clone())
            };
            vars.insert(name.clone(), var);
        }
        Binding { vars }
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    pub fn trainable_count(&self, frozen_prefixes: &[&str]) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| !frozen_prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(_, a)| a.len())
            .sum()
    }

    /// Versioned binary checkpoint: magic, version, config echo, named
    /// parameter table, optional EMA shadow table. Written atomically.
    pub fn save(
        &self,
        path: &Path,
        ema: Option<&BTreeMap<String, NdArray>>,
    ) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg_text = self.cfg.to_text();
        buf.extend_from_slice(&(cfg_text.len() as u64).to_le_bytes());
        buf.extend_from_slice(cfg_text.as_bytes());
        write_table(&mut buf, &self.params);
        match ema {
            Some(table) => {
                buf.push(1);
                write_table(&mut buf, table);
            }
            None => buf.push(0),
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<BTreeMap<String, NdArray>>), ModelError> {
        let buf = fs::read(path)?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8], ModelError> {
            if *off + n > buf.len() {
                return Err(ModelError::MalformedCheckpoint("truncated".into()));
            }
            let s = &buf[*off..*off + n];
            *off += n;
            Ok(s)
        };
        if take(&mut off, 4)? != CHECKPOINT_MAGIC {
            return Err(ModelError::MalformedCheckpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "version {version}"
            )));
        }
        let cfg_len = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
        let cfg_text = std::str::from_utf8(take(&mut off, cfg_len)?)
            .map_err(|_| ModelError::MalformedCheckpoint("config not utf-8".into()))?;
        let cfg = ModelConfig::from_text(cfg_text)?;
        let params = read_table(&buf, &mut off)?;
        let has_ema = take(&mut off, 1)?[0];
        let ema = if has_ema == 1 {
            Some(read_table(&buf, &mut off)?)
        } else {
            None
        };
        Ok((Model { cfg, params }, ema))
    }
}

fn write_table(buf: &mut Vec<u8>, table: &BTreeMap<String, NdArray>) {
    buf.extend_from_slice(&(table.len() as u64).to_le_bytes());
    for (name, array) in table {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(array.shape().len() as u8);
        for &dim in array.shape() {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in array.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_table(buf: &[u8], off: &mut usize) -> Result<BTreeMap<String, NdArray>, ModelError> {
    let trunc = || ModelError::MalformedCheckpoint("truncated".into());
    let take = |off: &mut usize, n: usize| -> Result<&[u8], ModelError> {
        if *off + n > buf.len() {
            return Err(trunc());
        }
        let s = &buf[*off..*off + n];
        *off += n;
        Ok(s)
    };
    let count = u64::from_le_bytes(take(off, 8)?.try_into().unwrap()) as usize;
    let mut table = BTreeMap::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(off, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(off, name_len)?)
            .map_err(|_| ModelError::MalformedCheckpoint("name not utf-8".into()))?
            .to_string();
        let rank = take(off, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(off, 8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(take(off, 8)?.try_into().unwrap()));
        }
        table.insert(
            name,
            NdArray::new(&shape, data)
                .map_err(|e| ModelError::MalformedCheckpoint(e.to_string()))?,
        );
    }
    Ok(table)
}

/// Fixed sinusoidal positional encodings, shape [t, d].
pub fn sinusoidal_pe(t: usize, d: usize) -> NdArray {
    let mut data = Vec::with_capacity(t * d);
    for pos in 0..t {
        for j in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let x = pos as f64 * freq;
            data.push(if j % 2 == 0 { x.sin() } else { x.cos() });
        }
    }
    NdArray::new(&[t, d], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_arithmetic() {
        let paper = ModelConfig::paper();
        paper.validate().unwrap();
        assert_eq!(paper.seq_len(), 175);
        assert_eq!(paper.patch_count(), 139);
        assert_eq!(paper.masked_count(), 97);
        let toy = ModelConfig::toy();
        toy.validate().unwrap();
        assert_eq!(toy.seq_len(), 32);
    }

    #[test]
    fn config_text_round_trip() {
        for cfg in [ModelConfig::paper(), ModelConfig::toy()] {
            let t = cfg.to_text();
            assert_eq!(ModelConfig::from_text(&t).unwrap(), cfg);
        }
        assert!(ModelConfig::from_text("nonsense=1\n").is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ModelConfig::toy();
        cfg.d_model = 65;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::toy();
        cfg.conv_strides = vec![1, 2, 2, 3];
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::toy();
        cfg.patch_stride = 17;
        assert!(matches!(
            cfg.validate(),
            Err(ModelError::PatchConfigInvalid(_))
        ));
    }

    #[test]
    fn init_is_deterministic_and_counts_split() {
        let a = Model::init(ModelConfig::toy(), 5).unwrap();
        let b = Model::init(ModelConfig::toy(), 5).unwrap();
        assert_eq!(a, b);
        let c = Model::init(ModelConfig::toy(), 6).unwrap();
        assert_ne!(a, c);
        let frozen = a.trainable_count(&["g."]);
        assert!(frozen < a.param_count());
    }

    #[test]
    fn checkpoint_round_trip_with_ema() {
        let model = Model::init(ModelConfig::toy(), 1).unwrap();
        let mut ema = model.params.clone();
        for v in ema.values_mut() {
            for x in v.data_mut() {
                *x *= 0.5;
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path, Some(&ema)).unwrap();
        let (back, ema_back) = Model::load(&path).unwrap();
        assert_eq!(model, back);
        assert_eq!(ema_back.unwrap(), ema);
        // and without EMA
        model.save(&path, None).unwrap();
        let (_, none) = Model::load(&path).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn corrupt_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(Model::load(&path).is_err());
    }

    #[test]
    fn pe_is_bounded_and_position_dependent() {
        let pe = sinusoidal_pe(16, 8);
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        let row0: Vec<f64> = pe.data()[0..8].to_vec();
        let row5: Vec<f64> = pe.data()[40..48].to_vec();
        assert_ne!(row0, row5);
    }
}
