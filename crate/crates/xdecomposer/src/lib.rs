//! Desk-scale toolkit for multiphase powder X-ray diffraction analysis.
//!
//! The pipeline runs end to end on a CPU: parse crystal structures from a
//! CIF subset, simulate single-phase patterns through the full physics
//! chain, synthesize multiphase mixtures online, train a query-based
//! soft-mask decomposer on top of a built-in reverse-mode autodiff engine,
//! and score decomposition and phase-retrieval quality.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `xdc` binary for the batch pipeline commands.

pub mod autograd;
pub mod config;
pub mod crystal;
pub mod data;
pub mod eval;
pub mod model;
pub mod pattern;
pub mod pipeline;
pub mod sim;
pub mod train;
