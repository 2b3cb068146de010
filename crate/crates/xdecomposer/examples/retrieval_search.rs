//! Phase retrieval against a reference library: coarse cosine recall, then
//! shift-tolerant rerank.
//!
//! Run with: cargo run --example retrieval_search

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xdecomposer::data::ReferenceLibrary;
use xdecomposer::eval::{RetrievalIndex, DEFAULT_CANDIDATES};
use xdecomposer::pattern::{DiffractionPattern, Grid};
use xdecomposer::sim::{voigt_profile, ProfileMode};

fn main() {
    let grid = Grid::from_range(10.0, 50.0, 0.02);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // 60 synthetic phases, three random peaks each
    let entries: Vec<(String, DiffractionPattern)> = (0..60)
        .map(|i| {
            let mut v = vec![0.0; grid.len];
            for _ in 0..3 {
                let c = rng.gen_range(12.0..48.0);
                let h = rng.gen_range(0.3..1.0);
                let p = voigt_profile(c, 0.15, grid, ProfileMode::PseudoVoigt).unwrap();
                for (a, b) in v.iter_mut().zip(&p) {
                    *a += h * b * 0.15;
                }
            }
            let mut pattern = DiffractionPattern::new(grid, v).unwrap();
            pattern.normalize_max();
            (format!("phase{i:02}"), pattern)
        })
        .collect();
    let library = ReferenceLibrary::new(entries).unwrap();
    let index = RetrievalIndex::build(&library, DEFAULT_CANDIDATES).unwrap();

    // query: library member 17 with noise and a small angular shift
    let truth = "phase17";
    let base = library.get(truth).unwrap();
    let mut q = vec![0.0; grid.len];
    q[4..].copy_from_slice(&base.intensities[..grid.len - 4]); // 0.08 degree shift
    for v in &mut q {
        *v += 0.01 * rng.gen_range(-1.0..1.0);
        *v = v.max(0.0);
    }
    let query = DiffractionPattern::new(grid, q).unwrap();

    let top = index.retrieve_topk(&query, 5).unwrap();
    println!("query: {truth} shifted by 0.08 degrees with 1% noise");
    println!("top-5 retrieved:");
    for (rank, id) in top.iter().enumerate() {
        let marker = if id == truth { "  <- true phase" } else { "" };
        println!("  {}. {id}{marker}", rank + 1);
    }
    assert_eq!(top[0], truth);
}
