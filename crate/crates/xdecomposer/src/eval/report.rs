//! Run-level evaluation: PIT alignment, metric aggregation, plot data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::peaks::{detect_peaks, match_peaks, peak_metrics};
use super::retrieval::RetrievalIndex;
use super::{pearson, EvalError, PEAK_MATCH_TOL, PEAK_MIN_HEIGHT, PEAK_MIN_SEPARATION};
use crate::autograd::{NdArray, Tape};
use crate::data::MixtureSample;
use crate::pattern::DiffractionPattern;
use crate::train::{pit_match, LossWeights};

/// Aggregated metrics for one group of samples (overall or one K).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub samples: usize,
    /// Matched (prediction, truth) component pairs evaluated.
    pub components: usize,
    pub pearson_mean: f64,
    /// Components with a defined Pearson value.
    pub pearson_count: usize,
    pub peak_shift_mean: f64,
    pub fwhm_error_mean: f64,
    /// Matched peak pairs behind the two geometry means.
    pub matched_peak_pairs: usize,
    pub top1_pct: f64,
    pub top10_pct: f64,
    /// Components with a retrieval verdict.
    pub retrieval_count: usize,
}

#[derive(Default, Clone)]
struct Accumulator {
    samples: usize,
    components: usize,
    pearson_sum: f64,
    pearson_count: usize,
    shift_sum: f64,
    fwhm_sum: f64,
    peak_pairs: usize,
    top1_hits: usize,
    top10_hits: usize,
    retrieval_count: usize,
}

impl Accumulator {
    fn finalize(&self) -> GroupMetrics {
        let ratio = |num: f64, den: usize| if den > 0 { num / den as f64 } else { f64::NAN };
        GroupMetrics {
            samples: self.samples,
            components: self.components,
            pearson_mean: ratio(self.pearson_sum, self.pearson_count),
            pearson_count: self.pearson_count,
            peak_shift_mean: ratio(self.shift_sum, self.peak_pairs),
            fwhm_error_mean: ratio(self.fwhm_sum, self.peak_pairs),
            matched_peak_pairs: self.peak_pairs,
            top1_pct: ratio(100.0 * self.top1_hits as f64, self.retrieval_count),
            top10_pct: ratio(100.0 * self.top10_hits as f64, self.retrieval_count),
            retrieval_count: self.retrieval_count,
        }
    }
}

/// Full evaluation report with a per-K breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall: GroupMetrics,
    pub per_k: BTreeMap<usize, GroupMetrics>,
}

impl EvalReport {
    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>6} {:>9} {:>11} {:>11} {:>8} {:>8}",
            "group", "samples", "comps", "pearson", "shift_deg", "fwhm_deg", "top1_%", "top10_%"
        );
        let mut row = |name: &str, m: &GroupMetrics| {
            let _ = writeln!(
                out,
                "{:<8} {:>7} {:>6} {:>9.4} {:>11.4} {:>11.4} {:>8.2} {:>8.2}",
                name,
                m.samples,
                m.components,
                m.pearson_mean,
                m.peak_shift_mean,
                m.fwhm_error_mean,
                m.top1_pct,
                m.top10_pct
            );
        };
        for (k, m) in &self.per_k {
            row(&format!("K={k}"), m);
        }
        row("overall", &self.overall);
        out
    }

    /// Machine-readable key=value summary.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut emit = |prefix: &str, m: &GroupMetrics| {
            let _ = writeln!(out, "{prefix}.samples = {}", m.samples);
            let _ = writeln!(out, "{prefix}.components = {}", m.components);
            let _ = writeln!(out, "{prefix}.pearson_mean = {:.6}", m.pearson_mean);
            let _ = writeln!(out, "{prefix}.pearson_count = {}", m.pearson_count);
            let _ = writeln!(out, "{prefix}.peak_shift_mean = {:.6}", m.peak_shift_mean);
            let _ = writeln!(out, "{prefix}.fwhm_error_mean = {:.6}", m.fwhm_error_mean);
            let _ = writeln!(out, "{prefix}.matched_peak_pairs = {}", m.matched_peak_pairs);
            let _ = writeln!(out, "{prefix}.top1_pct = {:.4}", m.top1_pct);
            let _ = writeln!(out, "{prefix}.top10_pct = {:.4}", m.top10_pct);
            let _ = writeln!(out, "{prefix}.retrieval_count = {}", m.retrieval_count);
        };
        for (k, m) in &self.per_k {
            emit(&format!("k{k}"), m);
        }
        emit("overall", &self.overall);
        out
    }
}

/// Score stored decompositions against their ground truths. `predictions[i]`
/// holds the K_max predicted component rows for `samples[i]`; matching uses
/// the same separation loss as training. With `plot_dir`, per-sample overlay
/// files are written.
pub fn evaluate_run(
    samples: &[MixtureSample],
    predictions: &[Vec<Vec<f64>>],
    index: Option<&RetrievalIndex>,
    weights: &LossWeights,
    plot_dir: Option<&Path>,
) -> Result<EvalReport, EvalError> {
    assert_eq!(samples.len(), predictions.len());
    let mut overall = Accumulator::default();
    let mut per_k: BTreeMap<usize, Accumulator> = BTreeMap::new();

    for (i, (sample, pred_rows)) in samples.iter().zip(predictions).enumerate() {
        let grid = sample.mixed.grid;
        let l = grid.len;
        for row in pred_rows {
            if row.len() != l {
                return Err(EvalError::LengthMismatch(row.len(), l));
            }
        }
        if let Some(idx) = index {
            if *idx.grid() != grid {
                return Err(EvalError::GridMismatch);
            }
        }

        // PIT alignment with the training separation loss
        let mut tape = Tape::new();
        let flat: Vec<f64> = pred_rows.iter().flatten().copied().collect();
        let comps = tape.constant(NdArray::new(&[pred_rows.len(), l], flat).map_err(
            crate::train::TrainError::from,
        )?);
        let targets: Vec<&[f64]> = sample.components[..sample.active_count]
            .iter()
            .map(|p| p.intensities.as_slice())
            .collect();
        let pit = pit_match(&mut tape, comps, &targets, weights)?;

        overall.samples += 1;
        let group = per_k.entry(sample.active_count).or_default();
        group.samples += 1;

        for (t, &slot) in pit.assignment.iter().enumerate() {
            let pred = &pred_rows[slot];
            let truth = &sample.components[t].intensities;
            for acc in [&mut overall, per_k.get_mut(&sample.active_count).unwrap()] {
                acc.components += 1;
                if let Ok(p) = pearson(pred, truth) {
                    acc.pearson_sum += p;
                    acc.pearson_count += 1;
                }
            }
            let pred_pattern = DiffractionPattern::new(grid, pred.clone())?;
            let truth_pattern = &sample.components[t];
            let pp = detect_peaks(&pred_pattern, PEAK_MIN_HEIGHT, PEAK_MIN_SEPARATION);
            let tp = detect_peaks(truth_pattern, PEAK_MIN_HEIGHT, PEAK_MIN_SEPARATION);
            let pairs = match_peaks(&pp, &tp, PEAK_MATCH_TOL);
            if let Some((shift, width)) = peak_metrics(&pairs) {
                let n = pairs.len() as f64;
                for acc in [&mut overall, per_k.get_mut(&sample.active_count).unwrap()] {
                    acc.shift_sum += shift * n;
                    acc.fwhm_sum += width * n;
                    acc.peak_pairs += pairs.len();
                }
            }
            if let Some(idx) = index {
                let verdict = idx
                    .retrieve_topk(&pred_pattern, 10)
                    .map(|top| {
                        let true_id = &sample.component_ids[t];
                        (
                            top.first().map(|id| id == true_id).unwrap_or(false),
                            top.iter().any(|id| id == true_id),
                        )
                    })
                    .unwrap_or((false, false)); // degenerate query counts as a miss
                for acc in [&mut overall, per_k.get_mut(&sample.active_count).unwrap()] {
                    acc.retrieval_count += 1;
                    acc.top1_hits += verdict.0 as usize;
                    acc.top10_hits += verdict.1 as usize;
                }
            }
        }

        if let Some(dir) = plot_dir {
            write_plot_data(&dir.join(format!("sample_{i:04}")), sample, pred_rows, &pit.assignment)?;
        }
    }

    Ok(EvalReport {
        overall: overall.finalize(),
        per_k: per_k.iter().map(|(k, a)| (*k, a.finalize())).collect(),
    })
}

/// Per-sample overlay files: mixture, summed reconstruction, and aligned
/// truth/prediction pairs, all two-column text.
fn write_plot_data(
    dir: &Path,
    sample: &MixtureSample,
    pred_rows: &[Vec<f64>],
    assignment: &[usize],
) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    let grid = sample.mixed.grid;
    sample.mixed.write_text(&dir.join("mixture.xy"))?;
    let mut recon = vec![0.0; grid.len];
    for row in pred_rows {
        for (r, v) in recon.iter_mut().zip(row) {
            *r += v;
        }
    }
    DiffractionPattern::new(grid, recon)?.write_text(&dir.join("reconstruction.xy"))?;
    for (t, &slot) in assignment.iter().enumerate() {
        sample.components[t].write_text(&dir.join(format!("truth_{t}.xy")))?;
        DiffractionPattern::new(grid, pred_rows[slot].clone())?
            .write_text(&dir.join(format!("pred_{t}.xy")))?;
    }
    Ok(())
}
