//! Data-driven combustion optimization for a coal-fired boiler.
//!
//! Linear ε-SVR predictors map controls and plant measurements to furnace
//! zone temperatures and flue-gas oxygen. A windowed residual mean corrects
//! their bias online, the corrected predictors define a convex quadratic
//! objective over the controls, and an interior-point solver picks the next
//! control vector. A synthetic plant closes the loop for evaluation.

// `!(a > b)` rejects NaN on purpose; index loops mirror the matrix algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod clock;
pub mod compensation;
pub mod controlloop;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod objective;
pub mod plantsim;
pub mod qpsolver;
pub mod svr;

pub use error::{Error, Result};
