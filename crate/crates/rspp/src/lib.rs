//! Simulation and Bayesian inference for repulsive spatial point processes.
//!
//! The toolkit covers two repulsive models on rectangular windows — the
//! Strauss pairwise-interaction process and a Gaussian-kernel determinantal
//! point process — with exact samplers for both, likelihood-free MCMC
//! (exchange and noisy-exchange variants), ABC samplers driven by
//! semi-automatic summaries, pseudo-likelihood estimation, and chain
//! diagnostics. All stochastic algorithms draw from counter-derived random
//! streams so runs are reproducible bit for bit at any worker count.

pub mod abc;
pub mod diagnostics;
pub mod dppg;
pub mod error;
pub mod geometry;
pub mod mcmc;
pub mod runtime;
pub mod strauss;

pub use error::{Error, Result};
