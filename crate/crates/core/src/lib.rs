//! Recovery of marginal treatment effect (MTE) curves from multi-cell
//! experiments with one-sided noncompliance, and the reach decision built on
//! the recovered curves.

// `!(x < y)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod calibrate;
pub mod decide;
pub mod design;
pub mod dgp;
pub mod error;
pub mod estimate;
pub mod metrics;
pub mod numeric;
pub mod presets;
pub mod simulate;
pub mod tables;

pub use error::{Error, Result};
