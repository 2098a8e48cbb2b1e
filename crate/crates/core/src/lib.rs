//! Model-assisted estimation of nonlinear finite-population parameters with
//! penalized B-spline calibration weights.
//!
//! The pipeline: draw a sample ([`sampling_designs`]), build one weight
//! system from the auxiliary covariate ([`calibration_weights`]), evaluate
//! plug-in functionals on the weighted measure ([`functionals`]), then
//! estimate variance from spline residuals of the linearized variable
//! ([`linearization`], [`variance`]). [`simulation`] runs design-based
//! Monte Carlo studies over that pipeline.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration_weights;
pub mod error;
pub mod estimation;
pub mod functionals;
pub mod linalg;
pub mod linearization;
pub mod sampling_designs;
pub mod simulation;
pub mod spline_basis;
pub mod variance;

pub use error::{Error, Result};
