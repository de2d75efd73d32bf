//! Slice-level compute kernels behind the tape operations.
//!
//! Every kernel works on a single sample and a fixed loop order, so results
//! are bitwise reproducible for identical inputs.

pub(crate) mod conv;
pub(crate) mod pool;
