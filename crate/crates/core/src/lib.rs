//! Range-based realized volatility, quantile autoregressions on the common
//! volatility factor, and density forecast evaluation.

// Negated comparisons deliberately treat NaN as failing the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod density;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod forecast;
pub mod ingest;
pub mod optim;
pub mod quantreg;
pub mod rangevol;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
