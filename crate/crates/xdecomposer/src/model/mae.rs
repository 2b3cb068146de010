//! Masked-autoencoder pretraining forward pass for the global encoder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::global_layers;
use super::{sinusoidal_pe, Binding, ModelConfig, ModelError};
use crate::autograd::{NdArray, Tape, Var};

/// Tape handles of a pretraining forward pass.
pub struct MaeForward {
    /// [1, L] overlap-averaged reconstruction.
    pub recon: Var,
    /// Sorted indices of the masked patches.
    pub masked: Vec<usize>,
}

fn linear(tape: &mut Tape, b: &Binding, prefix: &str, x: Var) -> Result<Var, ModelError> {
    let h = tape.matmul(x, b.get(&format!("{prefix}.w")))?;
    Ok(tape.add_bias(h, b.get(&format!("{prefix}.b")))?)
}

/// Overlapping patch views of `x`, flattened row-major to [P, patch_size].
pub(crate) fn patchify(cfg: &ModelConfig, x: &[f64]) -> NdArray {
    let p = cfg.patch_count();
    let mut data = Vec::with_capacity(p * cfg.patch_size);
    for i in 0..p {
        let start = i * cfg.patch_stride;
        data.extend_from_slice(&x[start..start + cfg.patch_size]);
    }
    NdArray::new(&[p, cfg.patch_size], data).unwrap()
}

/// Scatter per-patch predictions [P, patch_size] back onto the signal grid,
/// averaging where patches overlap. Returns [1, L].
pub(crate) fn overlap_average(
    tape: &mut Tape,
    cfg: &ModelConfig,
    pred: Var,
) -> Result<Var, ModelError> {
    let (ps, stride, p) = (cfg.patch_size, cfg.patch_stride, cfg.patch_count());
    // identity kernel: channel i of the input writes offset i of each patch
    let mut ident = vec![0.0; ps * ps];
    for i in 0..ps {
        ident[i * ps + i] = 1.0;
    }
    let w = tape.constant(NdArray::new(&[ps, 1, ps], ident)?);
    let zero_b = tape.constant(NdArray::new(&[1], vec![0.0])?);
    let pred_t = tape.transpose(pred)?;
    let scattered = tape.conv_transpose1d(pred_t, w, zero_b, stride, 0)?;
    let mut coverage = vec![0.0; cfg.l];
    for i in 0..p {
        for c in &mut coverage[i * stride..i * stride + ps] {
            *c += 1.0;
        }
    }
    let inv = tape.constant(NdArray::new(
        &[1, cfg.l],
        coverage.iter().map(|c| 1.0 / c).collect(),
    )?);
    Ok(tape.mul(scattered, inv)?)
}

/// Deterministic masked-patch selection for a given stream seed.
pub(crate) fn sample_mask(cfg: &ModelConfig, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..cfg.patch_count()).collect();
    idx.shuffle(&mut rng);
    let mut masked: Vec<usize> = idx[..cfg.masked_count()].to_vec();
    masked.sort_unstable();
    masked
}

/// MAE forward pass: embed visible patches, encode with G, reinsert mask
/// tokens, run the auxiliary decoder, scatter patch predictions back to the
/// signal grid with overlap averaging.
pub fn mae_pretrain_forward(
    tape: &mut Tape,
    b: &Binding,
    cfg: &ModelConfig,
    x: &[f64],
    seed: u64,
) -> Result<MaeForward, ModelError> {
    if x.len() != cfg.l {
        return Err(ModelError::InvalidConfig(format!(
            "input length {} != L {}",
            x.len(),
            cfg.l
        )));
    }
    let p = cfg.patch_count();
    let d = cfg.d_model;
    let masked = sample_mask(cfg, seed);
    let is_masked = {
        let mut m = vec![false; p];
        for &i in &masked {
            m[i] = true;
        }
        m
    };
    let visible: Vec<usize> = (0..p).filter(|&i| !is_masked[i]).collect();

    let patches = patchify(cfg, x);
    let pe = sinusoidal_pe(p, d);
    let vis_data: Vec<f64> = visible
        .iter()
        .flat_map(|&i| patches.data()[i * cfg.patch_size..(i + 1) * cfg.patch_size].to_vec())
        .collect();
    let vis = tape.constant(NdArray::new(&[visible.len(), cfg.patch_size], vis_data)?);
    let embedded = linear(tape, b, "mae.embed", vis)?;
    let vis_pe: Vec<f64> = visible
        .iter()
        .flat_map(|&i| pe.data()[i * d..(i + 1) * d].to_vec())
        .collect();
    let pe_v = tape.constant(NdArray::new(&[visible.len(), d], vis_pe)?);
    let tokens = tape.add(embedded, pe_v)?;
    let encoded = global_layers(tape, b, cfg, tokens)?;

    // reassemble the full sequence, mask tokens at masked positions
    let mask_token = b.get("mae.mask_token");
    let mut rows = Vec::with_capacity(p);
    let mut vis_cursor = 0usize;
    for i in 0..p {
        if is_masked[i] {
            rows.push(mask_token);
        } else {
            rows.push(tape.slice(encoded, vis_cursor, 1)?);
            vis_cursor += 1;
        }
    }
    let seq = tape.concat(&rows)?;
    let pe_full = tape.constant(pe);
    let seq = tape.add(seq, pe_full)?;

    let attn = super::net::multi_head_attention(tape, b, "mae.dec.attn", seq, seq, cfg.n_heads)?;
    let h = tape.add(seq, attn)?;
    let h = tape.layer_norm(h, b.get("mae.dec.ln.g"), b.get("mae.dec.ln.b"))?;
    let pred = linear(tape, b, "mae.head", h)?;
    let recon = overlap_average(tape, cfg, pred)?;
    Ok(MaeForward { recon, masked })
}
