//! The whole pipeline end to end at toy scale: simulate a corpus from
//! built-in structures, pretrain, train, decompose, and evaluate.
//! Equivalent to `xdc smoke`.
//!
//! Run with: cargo run --example full_pipeline

use xdecomposer::pipeline::cmd_smoke;

fn main() {
    let out = std::env::temp_dir().join("xdc_example_smoke");
    let report = cmd_smoke(7, &out).expect("smoke pipeline");
    print!("{}", report.to_table());
    println!("\nrun artifacts under {}", out.display());
    for stage in [
        "cifs",
        "simulate",
        "mix",
        "pretrain",
        "train",
        "decompose",
        "evaluate",
    ] {
        println!("  {}/", out.join(stage).display());
    }
}
