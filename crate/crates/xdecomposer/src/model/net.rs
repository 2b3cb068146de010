//! Forward graph builders for the decomposition path.

use super::{sinusoidal_pe, Binding, ModelConfig, ModelError};
use crate::autograd::{NdArray, Tape, Var};

/// Per-slot summaries, activity, and FiLM parameters.
pub struct SlotOutputs {
    /// [K, d] slot summaries.
    pub s: Var,
    /// [K, 1] activity logits.
    pub logits: Var,
    /// [K, 1] activity probabilities.
    pub p: Var,
    /// [K, d] FiLM gains.
    pub gammas: Var,
    /// [K, d] FiLM shifts.
    pub betas: Var,
}

/// Tape handles of a full decomposition forward pass.
pub struct Forward {
    /// [K, L] soft masks in (0,1).
    pub masks: Var,
    /// [K, L] masked components m_k * x.
    pub components: Var,
    /// [1, L] reconstruction sum.
    pub recon: Var,
    /// [K, T] spatial competition weights.
    pub w: Var,
    pub slots: SlotOutputs,
}

/// Plain-value view of a decomposition, extracted from the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub masks: Vec<Vec<f64>>,
    pub components: Vec<Vec<f64>>,
    pub activities: Vec<f64>,
    pub reconstruction: Vec<f64>,
    /// Slots with activity above tau.
    pub active_set: Vec<usize>,
}

/// Per-stage "same"-style padding: output length = input length / stride.
pub(crate) fn stage_padding(kernel: usize, stride: usize) -> usize {
    (kernel - stride + 1) / 2
}

/// Columns start..start+len of a 2D tensor, via transpose-slice-transpose.
fn cols(tape: &mut Tape, x: Var, start: usize, len: usize) -> Result<Var, ModelError> {
    let t = tape.transpose(x)?;
    let s = tape.slice(t, start, len)?;
    Ok(tape.transpose(s)?)
}

fn linear(tape: &mut Tape, b: &Binding, prefix: &str, x: Var) -> Result<Var, ModelError> {
    let h = tape.matmul(x, b.get(&format!("{prefix}.w")))?;
    Ok(tape.add_bias(h, b.get(&format!("{prefix}.b")))?)
}

/// Multi-head attention with parameter group `prefix`: queries from `q_in`
/// [Tq, d], keys/values from `kv_in` [Tk, d].
pub(crate) fn multi_head_attention(
    tape: &mut Tape,
    b: &Binding,
    prefix: &str,
    q_in: Var,
    kv_in: Var,
    n_heads: usize,
) -> Result<Var, ModelError> {
    let d = tape.value(q_in).shape()[1];
    let dh = d / n_heads;
    let project = |tape: &mut Tape, x: Var, part: &str| -> Result<Var, ModelError> {
        let w = b.get(&format!("{prefix}.{part}"));
        let bias = b.get(&format!("{prefix}.{part}b"));
        let h = tape.matmul(x, w)?;
        Ok(tape.add_bias(h, bias)?)
    };
    let q = project(tape, q_in, "wq")?;
    let k = project(tape, kv_in, "wk")?;
    let v = project(tape, kv_in, "wv")?;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = cols(tape, q, h * dh, dh)?;
        let kh = cols(tape, k, h * dh, dh)?;
        let vh = cols(tape, v, h * dh, dh)?;
        // collect transposed head outputs so the merge is a single concat
        let out = tape.scaled_dot_attention(qh, kh, vh)?;
        heads.push(tape.transpose(out)?);
    }
    let merged_t = tape.concat(&heads)?;
    let merged = tape.transpose(merged_t)?;
    project(tape, merged, "wo")
}

fn layer_norm(tape: &mut Tape, b: &Binding, prefix: &str, x: Var) -> Result<Var, ModelError> {
    Ok(tape.layer_norm(x, b.get(&format!("{prefix}.g")), b.get(&format!("{prefix}.b")))?)
}

/// Hierarchical conv analyzer: x [1, L] -> ([T, c_last] latent, per-stage
/// feature maps for skip fusion).
pub fn encode_local(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    x: Var,
) -> Result<(Var, Vec<Var>), ModelError> {
    let shape = tape.value(x).shape();
    if shape != [1, cfg.l] {
        return Err(ModelError::InvalidConfig(format!(
            "encode_local input shape {shape:?}, want [1, {}]",
            cfg.l
        )));
    }
    let mut h = x;
    let mut skips = Vec::with_capacity(cfg.conv_channels.len());
    for i in 0..cfg.conv_channels.len() {
        let (k, s) = (cfg.conv_kernels[i], cfg.conv_strides[i]);
        let c = tape.conv1d(
            h,
            b.get(&format!("enc.stage{i}.w")),
            b.get(&format!("enc.stage{i}.b")),
            s,
            stage_padding(k, s),
        )?;
        h = tape.gelu(c);
        skips.push(h);
    }
    Ok((tape.transpose(h)?, skips))
}

/// The global encoder G proper: pre-norm transformer layers plus a final
/// layer norm, applied to a d_model token sequence.
pub(crate) fn global_layers(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    tokens: Var,
) -> Result<Var, ModelError> {
    let mut x = tokens;
    for layer in 0..cfg.n_layers {
        let p = format!("g.layer{layer}");
        let n1 = layer_norm(tape, b, &format!("{p}.ln1"), x)?;
        let attn = multi_head_attention(tape, b, &format!("{p}.attn"), n1, n1, cfg.n_heads)?;
        x = tape.add(x, attn)?;
        let n2 = layer_norm(tape, b, &format!("{p}.ln2"), x)?;
        let h1 = linear(tape, b, &format!("{p}.mlp.fc1"), n2)?;
        let act = tape.gelu(h1);
        let h2 = linear(tape, b, &format!("{p}.mlp.fc2"), act)?;
        x = tape.add(x, h2)?;
    }
    layer_norm(tape, b, "g.ln", x)
}

/// Project analyzer features to d_model, add positional encodings, run G.
pub fn encode_global(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    h: Var,
) -> Result<Var, ModelError> {
    let t = tape.value(h).shape()[0];
    let proj = linear(tape, b, "enc.proj", h)?;
    let pe = tape.constant(sinusoidal_pe(t, cfg.d_model));
    let tokens = tape.add(proj, pe)?;
    global_layers(tape, b, cfg, tokens)
}

/// Cross-attend the learnable queries over z and read out activity and FiLM
/// heads.
pub fn slot_attend(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    z: Var,
) -> Result<SlotOutputs, ModelError> {
    let q = b.get("slots.q");
    let s = multi_head_attention(tape, b, "slots.attn", q, z, cfg.n_heads)?;
    let logits = linear(tape, b, "slots.act", s)?;
    let p = tape.sigmoid(logits);
    let gammas = linear(tape, b, "slots.gamma", s)?;
    let betas = linear(tape, b, "slots.beta", s)?;
    Ok(SlotOutputs {
        s,
        logits,
        p,
        gammas,
        betas,
    })
}

/// Softmax-over-slots competition: w_{k,t} = softmax_k <gamma_k, z_t> / sqrt(d).
pub fn spatial_competition(
    tape: &mut Tape,
    z: Var,
    gammas: Var,
) -> Result<Var, ModelError> {
    let d = tape.value(z).shape()[1] as f64;
    let zt = tape.transpose(z)?;
    let scores = tape.matmul(gammas, zt)?;
    let scaled = tape.mul_scalar(scores, 1.0 / d.sqrt());
    Ok(tape.softmax(scaled, 0)?)
}

/// FiLM with effective weights alpha_{k,t} = w_{k,t} * p_k:
/// z'_t = z_t * (1 + gamma~_t) + beta~_t.
pub fn film_modulate(
    tape: &mut Tape,
    z: Var,
    w: Var,
    p: Var,
    gammas: Var,
    betas: Var,
) -> Result<Var, ModelError> {
    let t = tape.value(w).shape()[1];
    let ones_row = tape.constant(NdArray::new(&[1, t], vec![1.0; t]).unwrap());
    let p_tile = tape.matmul(p, ones_row)?;
    let alpha = tape.mul(w, p_tile)?;
    let alpha_t = tape.transpose(alpha)?;
    let gamma_t = tape.matmul(alpha_t, gammas)?;
    let beta_t = tape.matmul(alpha_t, betas)?;
    let zg = tape.mul(z, gamma_t)?;
    let zsum = tape.add(z, zg)?;
    Ok(tape.add(zsum, beta_t)?)
}

/// U-Net-style mirror decoder: upsample back to L, fusing the matching
/// analyzer feature map at each stage when skip fusion is enabled.
pub fn decode_masks(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    z_mod: Var,
    skips: &[Var],
) -> Result<Var, ModelError> {
    let proj = linear(tape, b, "dec.proj", z_mod)?;
    let mut h = tape.transpose(proj)?;
    for i in (1..cfg.conv_channels.len()).rev() {
        let s = cfg.conv_strides[i];
        let up = tape.conv_transpose1d(
            h,
            b.get(&format!("dec.stage{i}.w")),
            b.get(&format!("dec.stage{i}.b")),
            s,
            0,
        )?;
        h = tape.gelu(up);
        if cfg.skip_fusion {
            let cat = tape.concat(&[h, skips[i - 1]])?;
            let fused = tape.conv1d(
                cat,
                b.get(&format!("dec.fuse{i}.w")),
                b.get(&format!("dec.fuse{i}.b")),
                1,
                0,
            )?;
            h = tape.gelu(fused);
        }
    }
    let logits = tape.conv1d(h, b.get("dec.head.w"), b.get("dec.head.b"), 1, 0)?;
    Ok(tape.sigmoid(logits))
}

/// Components y_k = m_k * x and their sum.
pub fn reconstruct(
    tape: &mut Tape,
    cfg: &ModelConfig,
    masks: Var,
    x: &[f64],
) -> Result<(Var, Var), ModelError> {
    let mut tile = Vec::with_capacity(cfg.k_max * x.len());
    for _ in 0..cfg.k_max {
        tile.extend_from_slice(x);
    }
    let xt = tape.constant(NdArray::new(&[cfg.k_max, x.len()], tile)?);
    let components = tape.mul(masks, xt)?;
    let ones = tape.constant(NdArray::new(&[1, cfg.k_max], vec![1.0; cfg.k_max])?);
    let recon = tape.matmul(ones, components)?;
    Ok((components, recon))
}

/// Full decomposition forward pass over input pattern `x` (length L).
pub fn decompose_forward(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    x: &[f64],
) -> Result<Forward, ModelError> {
    if x.len() != cfg.l {
        return Err(ModelError::InvalidConfig(format!(
            "input length {} != L {}",
            x.len(),
            cfg.l
        )));
    }
    let xv = tape.constant(NdArray::new(&[1, cfg.l], x.to_vec())?);
    let (h, skips) = encode_local(tape, b, cfg, xv)?;
    let z = encode_global(tape, b, cfg, h)?;
    let slots = slot_attend(tape, b, cfg, z)?;
    let w = spatial_competition(tape, z, slots.gammas)?;
    let z_mod = film_modulate(tape, z, w, slots.p, slots.gammas, slots.betas)?;
    let masks = decode_masks(tape, b, cfg, z_mod, &skips)?;
    let (components, recon) = reconstruct(tape, cfg, masks, x)?;
    Ok(Forward {
        masks,
        components,
        recon,
        w,
        slots,
    })
}

impl Forward {
    /// Extract plain values and the tau-thresholded active set.
    pub fn result(&self, tape: &Tape, cfg: &ModelConfig) -> DecompositionResult {
        let l = cfg.l;
        let row = |v: Var, k: usize| tape.value(v).data()[k * l..(k + 1) * l].to_vec();
        let activities: Vec<f64> = tape.value(self.slots.p).data().to_vec();
        DecompositionResult {
            masks: (0..cfg.k_max).map(|k| row(self.masks, k)).collect(),
            components: (0..cfg.k_max).map(|k| row(self.components, k)).collect(),
            reconstruction: tape.value(self.recon).data().to_vec(),
            active_set: activities
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > cfg.tau)
                .map(|(k, _)| k)
                .collect(),
            activities,
        }
    }
}
