//! Inference of PV array orientation from generation data with Bayesian
//! optimization, plus a differentially private release of the result.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bo;
pub mod data;
pub mod dp;
pub mod fitscore;
pub mod gp;
pub mod preprocess;
pub mod solar_model;
