//! Stage I at toy scale: masked-reconstruction pretraining on a handful of
//! synthetic single-phase patterns.
//!
//! Run with: cargo run --example pretrain_toy

use xdecomposer::model::{Model, ModelConfig};
use xdecomposer::train::{run_stage1, LossWeights, TrainConfig};

fn triangle(len: usize, center: usize, width: usize, height: f64) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let d = (i as f64 - center as f64).abs();
            (height * (1.0 - d / width as f64)).max(0.0)
        })
        .collect()
}

fn main() {
    let cfg = ModelConfig::toy();
    let mut model = Model::init(cfg.clone(), 7).unwrap();
    println!("toy model: {} parameters, L = {}", model.param_count(), cfg.l);

    let train: Vec<Vec<f64>> = (0..8)
        .map(|i| triangle(cfg.l, 60 + 45 * i, 12 + i, 0.5 + 0.05 * i as f64))
        .collect();
    let val: Vec<Vec<f64>> = (0..2)
        .map(|i| triangle(cfg.l, 100 + 150 * i, 15, 0.8))
        .collect();

    let mut tc = TrainConfig::stage1_defaults();
    tc.epochs = 6;
    tc.warmup_epochs = 1;
    tc.batch_size = 4;
    tc.lr = 2e-3;

    let mut log = Vec::new();
    let report = run_stage1(
        &mut model,
        &train,
        &val,
        &tc,
        &LossWeights::default(),
        Some(&mut log),
    )
    .unwrap();

    println!("\nepoch  train_loss  val_loss");
    for (e, (t, v)) in report.train_curve.iter().zip(&report.val_curve).enumerate() {
        println!("{e:>5}  {t:>10.5}  {v:>8.5}");
    }
    println!("\nbest epoch by validation loss: {}", report.best_epoch);
    let first = report.train_curve.first().unwrap();
    let last = report.train_curve.last().unwrap();
    println!("train loss {first:.4} -> {last:.4}");
    assert!(last < first, "pretraining should reduce the loss");
}
