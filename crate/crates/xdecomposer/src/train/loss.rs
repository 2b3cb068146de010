//! Differentiable loss terms and permutation-invariant matching.

use super::{LossWeights, TrainError};
use crate::autograd::{NdArray, Tape, Var};
use crate::model::Forward;

const LOG10_SCALE: f64 = 10.0 / std::f64::consts::LN_10;
const SISDR_EPS: f64 = 1e-8;
const SISDR_RATIO_CAP: f64 = 1e8;
/// Keeps d/dv sqrt(v) finite where masked predictions are exactly zero.
const SQRT_EPS: f64 = 1e-12;

fn row_constant(tape: &mut Tape, values: &[f64]) -> Var {
    tape.constant(NdArray::new(&[1, values.len()], values.to_vec()).unwrap())
}

/// sqrt(max(v, 0) + eps), elementwise, on the tape.
fn sqrt_guard(tape: &mut Tape, v: Var) -> Var {
    let c = tape.clamp(v, 0.0, f64::INFINITY);
    let shifted = tape.add_scalar(c, SQRT_EPS);
    tape.sqrt(shifted)
}

fn sqrt_guard_plain(v: f64) -> f64 {
    (v.max(0.0) + SQRT_EPS).sqrt()
}

/// First and second forward differences of a [1, L] row, as [L-1, 1] and
/// [L-2, 1] tensors.
fn differences(tape: &mut Tape, row: Var) -> Result<(Var, Var), TrainError> {
    let l = tape.value(row).shape()[1];
    let col = tape.transpose(row)?;
    let a = tape.slice(col, 1, l - 1)?;
    let b = tape.slice(col, 0, l - 1)?;
    let d1 = tape.sub(a, b)?;
    let h2 = tape.slice(col, 2, l - 2)?;
    let m2 = tape.slice(col, 1, l - 2)?;
    let l2 = tape.slice(col, 0, l - 2)?;
    let mm = tape.mul_scalar(m2, -2.0);
    let s = tape.add(h2, mm)?;
    let d2 = tape.add(s, l2)?;
    Ok((d1, d2))
}

fn mean_abs_diff(tape: &mut Tape, a: Var, b_vals: &[f64], shape: &[usize]) -> Var {
    let b = tape.constant(NdArray::new(shape, b_vals.to_vec()).unwrap());
    let d = tape.sub(a, b).unwrap();
    let ad = tape.abs(d);
    tape.mean(ad)
}

/// -SI-SDR(pred, target) in dB, stabilized. `pred` is [1, L].
fn negative_si_sdr(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var, TrainError> {
    let y = row_constant(tape, target);
    let py = tape.mul(pred, y)?;
    let dot = tape.sum(py);
    let ny: f64 = target.iter().map(|v| v * v).sum();
    let alpha = tape.mul_scalar(dot, 1.0 / (ny + SISDR_EPS));
    let s = tape.mul_scalar_var(y, alpha)?;
    let e = tape.sub(pred, s)?;
    let ss = tape.mul(s, s)?;
    let ee = tape.mul(e, e)?;
    let num_s = tape.sum(ss);
    let den_s = tape.sum(ee);
    let num = tape.add_scalar(num_s, SISDR_EPS);
    let den = tape.add_scalar(den_s, SISDR_EPS);
    let ratio = tape.div(num, den)?;
    let capped = tape.clamp(ratio, f64::MIN_POSITIVE, SISDR_RATIO_CAP);
    let ln = tape.log(capped);
    Ok(tape.mul_scalar(ln, -LOG10_SCALE))
}

/// Per-component separation loss: weighted amplitude error, shape (-SI-SDR),
/// and sqrt-domain first/second difference geometry, each mean-normalized.
/// `pred` is a [1, L] tape tensor; `target` a plain slice.
pub fn loss_separation(
    tape: &mut Tape,
    pred: Var,
    target: &[f64],
    w: &LossWeights,
) -> Result<Var, TrainError> {
    let shape = tape.value(pred).shape();
    if shape != [1, target.len()] {
        return Err(TrainError::LengthMismatch {
            pred: shape.iter().product(),
            target: target.len(),
        });
    }
    let l = target.len();

    let y = row_constant(tape, target);
    let d = tape.sub(pred, y)?;
    let ad = tape.abs(d);
    let emphasis: Vec<f64> = target.iter().map(|v| 1.0 + w.alpha_amp * v).collect();
    let e = row_constant(tape, &emphasis);
    let weighted = tape.mul(ad, e)?;
    let amp = tape.mean(weighted);

    let shape_term = negative_si_sdr(tape, pred, target)?;

    let sp = sqrt_guard(tape, pred);
    let (g1, g2) = differences(tape, sp)?;
    let st: Vec<f64> = target.iter().map(|&v| sqrt_guard_plain(v)).collect();
    let t1: Vec<f64> = st.windows(2).map(|p| p[1] - p[0]).collect();
    let t2: Vec<f64> = st.windows(3).map(|p| p[2] - 2.0 * p[1] + p[0]).collect();
    let geo1 = mean_abs_diff(tape, g1, &t1, &[l - 1, 1]);
    let geo2 = mean_abs_diff(tape, g2, &t2, &[l - 2, 1]);

    let sh = tape.mul_scalar(shape_term, w.lambda_shape);
    let g2w = tape.mul_scalar(geo2, w.beta_geo);
    let gsum = tape.add(geo1, g2w)?;
    let geo = tape.mul_scalar(gsum, w.lambda_geo);
    let s1 = tape.add(amp, sh)?;
    Ok(tape.add(s1, geo)?)
}

/// Pretraining reconstruction loss: same structure as the separation loss
/// with the pretrain shape/geometry weights. With `masked_only`, both sides
/// are restricted to the given signal region before the loss is taken.
pub fn pretrain_loss(
    tape: &mut Tape,
    recon: Var,
    target: &[f64],
    w: &LossWeights,
    region: Option<&[bool]>,
) -> Result<Var, TrainError> {
    let pre = LossWeights {
        lambda_shape: w.lambda_shape_pre,
        lambda_geo: w.lambda_geo_pre,
        ..w.clone()
    };
    match region {
        None => loss_separation(tape, recon, target, &pre),
        Some(mask) => {
            let ind: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            let indc = row_constant(tape, &ind);
            let masked_pred = tape.mul(recon, indc)?;
            let masked_target: Vec<f64> =
                target.iter().zip(&ind).map(|(v, i)| v * i).collect();
            loss_separation(tape, masked_pred, &masked_target, &pre)
        }
    }
}

/// Exhaustive minimum-cost injective assignment of `costs.len()` targets to
/// `k_max` slots. `costs[t][s]` is the cost of serving target t with slot s.
/// Returns (slot index per target, total cost); ties resolve to the
/// lexicographically smallest slot tuple.
pub fn assign_min(costs: &[Vec<f64>], k_max: usize) -> Result<(Vec<usize>, f64), TrainError> {
    let k = costs.len();
    if k > k_max {
        return Err(TrainError::KExceedsKmax { k, k_max });
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; k_max];
    fn rec(
        costs: &[Vec<f64>],
        k_max: usize,
        current: &mut Vec<usize>,
        used: &mut [bool],
        acc: f64,
        best: &mut Option<(Vec<usize>, f64)>,
    ) {
        let t = current.len();
        if t == costs.len() {
            if best.as_ref().map_or(true, |(_, c)| acc < *c) {
                *best = Some((current.clone(), acc));
            }
            return;
        }
        for s in 0..k_max {
            if used[s] {
                continue;
            }
            used[s] = true;
            current.push(s);
            rec(costs, k_max, current, used, acc + costs[t][s], best);
            current.pop();
            used[s] = false;
        }
    }
    rec(costs, k_max, &mut current, &mut used, 0.0, &mut best);
    let (assign, cost) = best.expect("at least one assignment exists");
    Ok((assign, cost))
}

/// PIT outcome: which slot serves each real target, the matched separation
/// loss on the tape, activity labels, and the plain matched cost.
pub struct PitMatch {
    /// slot index per target, length = number of real targets.
    pub assignment: Vec<usize>,
    /// Mean matched separation loss (tape scalar).
    pub loss: Var,
    /// 1.0 for matched slots, 0.0 otherwise; length k_max.
    pub labels: Vec<f64>,
    pub cost: f64,
}

/// Match the first `targets.len()` real targets against the K_max predicted
/// component rows, minimizing the summed separation loss over injective
/// assignments.
pub fn pit_match(
    tape: &mut Tape,
    components: Var,
    targets: &[&[f64]],
    w: &LossWeights,
) -> Result<PitMatch, TrainError> {
    let k_max = tape.value(components).shape()[0];
    let k = targets.len();
    if k > k_max {
        return Err(TrainError::KExceedsKmax { k, k_max });
    }
    // pairwise losses stay on the tape so the selected ones backpropagate
    let mut pair_vars = vec![Vec::with_capacity(k_max); k];
    let mut pair_costs = vec![Vec::with_capacity(k_max); k];
    for (t, target) in targets.iter().enumerate() {
        for s in 0..k_max {
            let row = tape.slice(components, s, 1)?;
            let l = loss_separation(tape, row, target, w)?;
            pair_costs[t].push(tape.value(l).item());
            pair_vars[t].push(l);
        }
    }
    let (assignment, cost) = assign_min(&pair_costs, k_max)?;
    let mut total = pair_vars[0][assignment[0]];
    for t in 1..k {
        total = tape.add(total, pair_vars[t][assignment[t]])?;
    }
    let loss = tape.mul_scalar(total, 1.0 / k as f64);
    let mut labels = vec![0.0; k_max];
    for &s in &assignment {
        labels[s] = 1.0;
    }
    Ok(PitMatch {
        assignment,
        loss,
        labels,
        cost,
    })
}

/// Per-term breakdown of the full decomposition objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub separation: f64,
    pub activity: f64,
    pub mixture: f64,
    pub total: f64,
}

/// Full training objective: PIT-matched separation + activity BCE + mixture
/// consistency. Returns the tape scalar, the breakdown, and the PIT outcome.
pub fn loss_total(
    tape: &mut Tape,
    fwd: &Forward,
    targets: &[&[f64]],
    x: &[f64],
    w: &LossWeights,
) -> Result<(Var, LossBreakdown, PitMatch), TrainError> {
    let pit = pit_match(tape, fwd.components, targets, w)?;
    let k_max = pit.labels.len();

    // BCE on activity probabilities; sigmoid output is strictly inside (0,1)
    let c = tape.constant(NdArray::new(&[k_max, 1], pit.labels.clone()).unwrap());
    let one_minus_c = tape.constant(NdArray::new(
        &[k_max, 1],
        pit.labels.iter().map(|l| 1.0 - l).collect(),
    )?);
    let ones = tape.constant(NdArray::new(&[k_max, 1], vec![1.0; k_max]).unwrap());
    let ln_p = tape.log(fwd.slots.p);
    let q = tape.sub(ones, fwd.slots.p)?;
    let ln_q = tape.log(q);
    let t1 = tape.mul(c, ln_p)?;
    let t2 = tape.mul(one_minus_c, ln_q)?;
    let s = tape.add(t1, t2)?;
    let ms = tape.mean(s);
    let act = tape.neg(ms);

    let mix = mean_abs_diff(tape, fwd.recon, x, &[1, x.len()]);

    let act_w = tape.mul_scalar(act, w.lambda_act);
    let mix_w = tape.mul_scalar(mix, w.lambda_mix);
    let s1 = tape.add(pit.loss, act_w)?;
    let total = tape.add(s1, mix_w)?;
    let breakdown = LossBreakdown {
        separation: tape.value(pit.loss).item(),
        activity: tape.value(act).item(),
        mixture: tape.value(mix).item(),
        total: tape.value(total).item(),
    };
    Ok((total, breakdown, pit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights() -> LossWeights {
        LossWeights::default()
    }

    fn pred_of(tape: &mut Tape, values: &[f64]) -> Var {
        tape.param(NdArray::new(&[1, values.len()], values.to_vec()).unwrap())
    }

    #[test]
    fn perfect_reconstruction_zeroes_amp_and_geometry() {
        let y: Vec<f64> = (0..32).map(|i| (i as f64 * 0.4).sin().abs()).collect();
        let mut w = weights();
        w.lambda_shape = 0.0; // isolate amplitude + geometry
        let mut tape = Tape::new();
        let p = pred_of(&mut tape, &y);
        let l = loss_separation(&mut tape, p, &y, &w).unwrap();
        assert!(tape.value(l).item().abs() < 1e-12);
    }

    #[test]
    fn si_sdr_hand_value_zero_db() {
        // pred (1,1), target (1,0): alpha=1, signal power 1, error power 1
        let mut tape = Tape::new();
        let p = pred_of(&mut tape, &[1.0, 1.0]);
        let term = negative_si_sdr(&mut tape, p, &[1.0, 0.0]).unwrap();
        assert!(tape.value(term).item().abs() < 1e-6);
    }

    #[test]
    fn si_sdr_is_scale_invariant() {
        let y = [0.2, 0.9, 0.1, 0.5];
        let p1 = [0.3, 0.8, 0.2, 0.4];
        let p2: Vec<f64> = p1.iter().map(|v| 2.0 * v).collect();
        let mut tape = Tape::new();
        let a = pred_of(&mut tape, &p1);
        let b = pred_of(&mut tape, &p2);
        let ta = negative_si_sdr(&mut tape, a, &y).unwrap();
        let tb = negative_si_sdr(&mut tape, b, &y).unwrap();
        // invariance holds up to the epsilon stabilization
        assert!((tape.value(ta).item() - tape.value(tb).item()).abs() < 1e-5);
    }

    #[test]
    fn si_sdr_perfect_hits_stabilized_floor() {
        let y = [4.0, 1.0, 8.0]; // signal power well above the cap threshold
        let mut tape = Tape::new();
        let p = pred_of(&mut tape, &y);
        let term = negative_si_sdr(&mut tape, p, &y).unwrap();
        // ratio capped at 1e8 -> -80 dB floor
        assert!((tape.value(term).item() + 80.0).abs() < 1e-6);
    }

    #[test]
    fn separation_loss_is_differentiable() {
        let y: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).cos().abs()).collect();
        let p: Vec<f64> = y.iter().map(|v| v * 0.8 + 0.05).collect();
        let mut tape = Tape::new();
        let pv = pred_of(&mut tape, &p);
        let l = loss_separation(&mut tape, pv, &y, &weights()).unwrap();
        let grads = tape.backward(l).unwrap();
        let g = grads[pv.0].as_ref().unwrap();
        assert!(g.data().iter().all(|v| v.is_finite()));
        assert!(g.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn separation_gradient_finite_at_exact_zero_prediction() {
        let y = vec![0.0; 8];
        let mut tape = Tape::new();
        let pv = pred_of(&mut tape, &vec![0.0; 8]);
        let l = loss_separation(&mut tape, pv, &y, &weights()).unwrap();
        let grads = tape.backward(l).unwrap();
        assert!(grads[pv.0]
            .as_ref()
            .unwrap()
            .data()
            .iter()
            .all(|v| v.is_finite()));
    }

    #[test]
    fn alpha_zero_amplitude_is_plain_mae() {
        let y = [0.1, 0.6, 0.3];
        let p = [0.2, 0.4, 0.3];
        let mut w = weights();
        w.alpha_amp = 0.0;
        w.lambda_shape = 0.0;
        w.lambda_geo = 0.0;
        let mut tape = Tape::new();
        let pv = pred_of(&mut tape, &p);
        let l = loss_separation(&mut tape, pv, &y, &w).unwrap();
        let mae = (0.1f64 + 0.2 + 0.0) / 3.0;
        assert!((tape.value(l).item() - mae).abs() < 1e-12);
    }

    #[test]
    fn assign_min_single_target_picks_argmin() {
        let costs = vec![vec![3.0, 1.0, 4.0, 0.5]];
        let (a, c) = assign_min(&costs, 4).unwrap();
        assert_eq!(a, vec![3]);
        assert!((c - 0.5).abs() < 1e-15);
    }

    #[test]
    fn assign_min_recovers_permutation() {
        // cost 0 exactly on a permutation
        let perm = [2usize, 0, 3, 1];
        let costs: Vec<Vec<f64>> = (0..4)
            .map(|t| (0..4).map(|s| if s == perm[t] { 0.0 } else { 1.0 }).collect())
            .collect();
        let (a, c) = assign_min(&costs, 4).unwrap();
        assert_eq!(a, perm);
        assert!(c.abs() < 1e-15);
    }

    #[test]
    fn assign_min_ties_break_lexicographically() {
        let costs = vec![vec![1.0, 1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0, 1.0]];
        let (a, _) = assign_min(&costs, 4).unwrap();
        assert_eq!(a, vec![0, 1]);
    }

    #[test]
    fn assign_min_rejects_too_many_targets() {
        let costs = vec![vec![0.0; 2]; 3];
        assert!(matches!(
            assign_min(&costs, 2),
            Err(TrainError::KExceedsKmax { .. })
        ));
    }

    #[test]
    fn assign_min_beats_every_enumerated_alternative() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..200 {
            let costs: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.gen_range(0.0..10.0)).collect())
                .collect();
            let (_, best) = assign_min(&costs, 4).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    for c in 0..4 {
                        if a == b || b == c || a == c {
                            continue;
                        }
                        let alt = costs[0][a] + costs[1][b] + costs[2][c];
                        assert!(best <= alt + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn pit_match_zero_cost_on_exact_permutation() {
        let l = 24;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let targets: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..l).map(|_| rng.gen_range(0.1..1.0)).collect())
            .collect();
        // components: slot0 = target2, slot1 = target0, slot2 = zeros, slot3 = target1
        let mut data = Vec::new();
        data.extend_from_slice(&targets[2]);
        data.extend_from_slice(&targets[0]);
        data.extend_from_slice(&vec![0.0; l]);
        data.extend_from_slice(&targets[1]);
        let mut w = weights();
        w.lambda_shape = 0.0; // exact matches have zero amp+geo cost
        let mut tape = Tape::new();
        let comps = tape.param(NdArray::new(&[4, l], data).unwrap());
        let refs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
        let pit = pit_match(&mut tape, comps, &refs, &w).unwrap();
        assert_eq!(pit.assignment, vec![1, 3, 0]);
        assert_eq!(pit.labels, vec![1.0, 1.0, 0.0, 1.0]);
        assert!(pit.cost.abs() < 1e-9);
    }

    #[test]
    fn pit_gradient_reaches_only_matched_slots_for_amp_only_loss() {
        let l = 8;
        let targets: Vec<Vec<f64>> = vec![vec![0.5; l]];
        let mut data = vec![0.9; l]; // slot 0: far
        data.extend_from_slice(&vec![0.52; l]); // slot 1: near
        data.extend_from_slice(&vec![0.9; l]);
        data.extend_from_slice(&vec![0.9; l]);
        let mut w = weights();
        w.lambda_shape = 0.0;
        w.lambda_geo = 0.0;
        let mut tape = Tape::new();
        let comps = tape.param(NdArray::new(&[4, l], data).unwrap());
        let refs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
        let pit = pit_match(&mut tape, comps, &refs, &w).unwrap();
        assert_eq!(pit.assignment, vec![1]);
        let grads = tape.backward(pit.loss).unwrap();
        let g = grads[comps.0].as_ref().unwrap();
        for i in 0..l {
            assert_eq!(g.data()[i], 0.0); // unmatched slot
            assert!(g.data()[l + i] != 0.0); // matched slot
        }
    }

    #[test]
    fn loss_total_linearity_in_mixture_weight() {
        use crate::model::{decompose_forward, Model, ModelConfig};
        let cfg = {
            let mut c = ModelConfig::toy();
            c.l = 64;
            c.d_model = 16;
            c.n_heads = 2;
            c.n_layers = 1;
            c.conv_channels = vec![2, 3, 4, 4];
            c.conv_kernels = vec![5, 4, 4, 4];
            c.conv_strides = vec![1, 2, 2, 4];
            c.patch_size = 8;
            c.patch_stride = 4;
            c
        };
        let model = Model::init(cfg.clone(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x: Vec<f64> = (0..cfg.l).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t0: Vec<f64> = x.iter().map(|v| v * 0.6).collect();
        let t1: Vec<f64> = x.iter().map(|v| v * 0.4).collect();
        let targets: Vec<&[f64]> = vec![&t0, &t1];
        let run = |lambda_mix: f64| {
            let mut w = weights();
            w.lambda_mix = lambda_mix;
            let mut tape = Tape::new();
            let b = model.bind(&mut tape, &[]);
            let fwd = decompose_forward(&mut tape, &b, &cfg, &x).unwrap();
            let (_, breakdown, _) = loss_total(&mut tape, &fwd, &targets, &x, &w).unwrap();
            breakdown
        };
        let b1 = run(1.0);
        let b2 = run(2.0);
        assert!((b1.mixture - b2.mixture).abs() < 1e-12); // raw term unweighted
        let weighted1 = b1.total - b1.separation - 0.5 * b1.activity;
        let weighted2 = b2.total - b2.separation - 0.5 * b2.activity;
        assert!((2.0 * weighted1 - weighted2).abs() < 1e-9);
    }
}
