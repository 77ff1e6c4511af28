//! Empirical-Bayes screening of paired nonnegative matrices under Tweedie
//! likelihoods.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod special;
pub mod tweedie;
pub mod quadrature;
pub mod mlfit;
pub mod screen;
pub mod metrics;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod plot;
pub mod sim;
