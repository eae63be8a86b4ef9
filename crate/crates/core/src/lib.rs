//! Inference-efficiency estimation for autoregressive Transformer models.
//!
//! - [`registry`]: model architectures and hardware profiles
//! - [`flops`]: exact FLOP counts for prompt encoding and generation
//! - [`runtime_model`]: piecewise-linear runtime parameters and evaluation
//! - [`estimator`]: two-step regression fit with min-over-trials denoising
//! - [`simulator`]: seeded synthetic black-box provider
//! - [`analysis`]: cost/energy, aggregation, Pareto frontiers, rankings
//! - [`cli`]: the `inferometer` command-line tool

pub mod analysis;
pub mod cli;
pub mod estimator;
pub mod flops;
pub mod registry;
pub mod runtime_model;
pub mod simulator;
