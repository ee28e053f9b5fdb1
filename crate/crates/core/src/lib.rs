//! Odds-ratio estimation for survey data with B-spline calibration on an
//! auxiliary variable.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bspline;
pub mod calibration;
pub mod design;
pub mod error;
pub mod frame;
pub mod linalg;
pub mod logistic;
pub mod oddsratio;
pub mod pipeline;
pub mod simulate;

pub use error::{Error, Result};
