//! Label-free model selection for time-series anomaly detection.
//!
//! Two selection branches share one detector pool:
//!
//! * [`ga`] searches detector subsets with a genetic algorithm, scoring each
//!   subset by training a fixed stacking meta-learner ([`meta`]).
//! * [`lints`] ranks single detectors with contextual Thompson sampling, and
//!   [`perturb`] ranks them under three stress tests (GAN borderline points,
//!   near-threshold injection, Monte-Carlo noise). The rankings are fused by
//!   Markov-chain aggregation ([`rank`]).
//!
//! [`online`] deploys both branches over a stream with periodic
//! re-optimization, and [`pipeline`] wires everything together for the CLI.

pub mod cli;
pub mod config;
pub mod data;
pub mod detectors;
pub mod error;
pub mod ga;
pub mod lints;
pub mod meta;
pub mod metrics;
pub mod online;
pub mod perturb;
pub mod pipeline;
pub mod rank;
pub mod seed;

pub use error::{Error, Result};
