//! Training, flatness measurement and bound certification for univariate
//! two-layer ReLU networks under logistic loss.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod datagen;
pub mod error;
pub mod exec;
pub mod objective;
pub mod relu_net;
pub mod spectral;
pub mod sweep;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Execution;
