//! Run one decomposition forward pass and inspect the constraints the
//! architecture enforces: masked components never exceed the input and the
//! reconstruction is their exact sum.
//!
//! Run with: cargo run --example decompose_mixture

use xdecomposer::autograd::Tape;
use xdecomposer::model::{decompose_forward, Model, ModelConfig};
use xdecomposer::pattern::Grid;
use xdecomposer::sim::{voigt_profile, ProfileMode};

fn main() {
    let cfg = ModelConfig::toy();
    let model = Model::init(cfg.clone(), 3).unwrap();
    let grid = Grid::new(10.0, 0.02, cfg.l);

    // two-phase synthetic mixture
    let mut x = vec![0.0; cfg.l];
    for (c, h) in [(12.0, 0.7), (14.5, 1.0), (18.0, 0.4)] {
        let p = voigt_profile(c, 0.15, grid, ProfileMode::PseudoVoigt).unwrap();
        for (a, b) in x.iter_mut().zip(&p) {
            *a += h * b * 0.15;
        }
    }

    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, &[]);
    let fwd = decompose_forward(&mut tape, &binding, &cfg, &x).unwrap();
    let result = fwd.result(&tape, &cfg);

    println!("slots: {}", result.components.len());
    for (k, p) in result.activities.iter().enumerate() {
        let mass: f64 = result.components[k].iter().sum();
        println!("  slot {k}: activity {p:.4}, component mass {mass:.4}");
    }
    println!("active set at tau={}: {:?}", cfg.tau, result.active_set);

    // the soft-mask construction guarantees 0 <= component <= input
    let mut bounded = true;
    for comp in &result.components {
        for (c, xi) in comp.iter().zip(&x) {
            if *c < 0.0 || *c > *xi + 1e-12 {
                bounded = false;
            }
        }
    }
    println!("components bounded by input: {bounded}");

    let worst_sum_gap = (0..cfg.l)
        .map(|t| {
            let s: f64 = result.components.iter().map(|c| c[t]).sum();
            (s - result.reconstruction[t]).abs()
        })
        .fold(0.0f64, f64::max);
    println!("max |sum(components) - reconstruction|: {worst_sum_gap:.2e}");
    assert!(bounded && worst_sum_gap < 1e-12);
}
