//! Controllability costs, resolvent constants and control transmutation for
//! conservative systems with boundary observation.

// Negated float comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod gramian;
pub mod linalg;
pub mod resolvent;
pub mod spectral;
pub mod tensor;
pub mod transmutation;
