//! From-scratch reverse-mode automatic differentiation over dense 1D/2D/3D
//! float64 arrays: just enough machinery for the decomposer network.

mod array;
mod tape;

pub use array::NdArray;
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutogradError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("unsupported axis {axis} for rank {rank}")]
    UnsupportedAxis { axis: usize, rank: usize },
}

/// Compare analytic gradients of a scalar-valued graph against central finite
/// differences; returns the worst relative error across all input elements.
///
/// `build` receives one tape variable per input array and must return the
/// scalar root.
pub fn finite_diff_check<F>(build: F, inputs: &[NdArray], eps: f64) -> Result<f64, AutogradError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutogradError>,
{
    let eval = |arrays: &[NdArray]| -> Result<f64, AutogradError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = arrays.iter().map(|a| tape.param(a.clone())).collect();
        let root = build(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.param(a.clone())).collect();
    let root = build(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut worst: f64 = 0.0;
    for (vi, var) in vars.iter().enumerate() {
        let analytic = grads[var.0]
            .as_ref()
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[vi].len()]);
        for j in 0..inputs[vi].len() {
            let mut plus = inputs.to_vec();
            plus[vi].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[vi].data_mut()[j] -= eps;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let a = analytic[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
