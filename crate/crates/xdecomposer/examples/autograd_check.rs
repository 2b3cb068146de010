//! Verify the reverse-mode tape against central finite differences on a
//! small composite graph.
//!
//! Run with: cargo run --example autograd_check

use xdecomposer::autograd::{finite_diff_check, NdArray, Tape};

fn main() {
    // z = mean(sigmoid(ln(A·B + b)) * softmax(A)·B)
    let a = NdArray::new(&[3, 4], (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap();
    let b = NdArray::new(&[4, 2], (0..8).map(|i| 0.2 * i as f64 - 0.7).collect()).unwrap();
    let bias = NdArray::from_vec(vec![0.3, -0.2]);
    let gain = NdArray::from_vec(vec![1.1, 0.9]);

    let worst = finite_diff_check(
        |tape, vars| {
            let (a, b, bias, gain) = (vars[0], vars[1], vars[2], vars[3]);
            let h = tape.matmul(a, b)?;
            let h = tape.layer_norm(h, gain, bias)?;
            let h = tape.sigmoid(h);
            let g = tape.softmax(a, 1)?;
            let g = tape.matmul(g, b)?;
            let prod = tape.mul(h, g)?;
            Ok(tape.mean(prod))
        },
        &[a.clone(), b.clone(), bias.clone(), gain],
        1e-6,
    )
    .unwrap();
    println!("worst relative gradient error (dense graph): {worst:.2e}");
    assert!(worst < 1e-6);

    // convolution path with gelu
    let x = NdArray::new(&[1, 16], (0..16).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
    let w = NdArray::new(&[2, 1, 5], (0..10).map(|i| 0.1 * i as f64 - 0.4).collect()).unwrap();
    let cb = NdArray::from_vec(vec![0.05, -0.05]);
    let worst_conv = finite_diff_check(
        |tape, vars| {
            let y = tape.conv1d(vars[0], vars[1], vars[2], 2, 1)?;
            let y = tape.gelu(y);
            Ok(tape.mean(y))
        },
        &[x, w, cb],
        1e-6,
    )
    .unwrap();
    println!("worst relative gradient error (conv path):  {worst_conv:.2e}");
    assert!(worst_conv < 1e-6);

    // a quick taste of the tape API itself
    let mut tape = Tape::new();
    let p = tape.param(NdArray::from_vec(vec![1.0, 2.0, 3.0]));
    let sq = tape.mul(p, p).unwrap();
    let loss = tape.sum(sq);
    let grads = tape.backward(loss).unwrap();
    println!(
        "d(sum(p^2))/dp at [1,2,3] = {:?}",
        grads[p.index()].as_ref().unwrap().data()
    );
}
