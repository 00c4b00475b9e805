//! Adaptive mode-selection policy optimization on a synthetic two-mode
//! reasoning environment.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advantage;
pub mod format;
pub mod policy;
pub mod reward;
pub mod environment;
pub mod rng;
pub mod trainer;
pub mod evaluation;
pub mod harness;
