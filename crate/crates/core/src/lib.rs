// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod estimation;
pub mod linalg;
pub mod lp;
pub mod moments;
pub mod performance;
pub mod power;
pub mod precoding;
pub mod rng;
pub mod scenario;
pub mod validation;
