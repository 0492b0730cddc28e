//! Deterministic federated-learning simulation framework.
//!
//! The round protocol combines an elastic Fisher-diagonal penalty on the
//! local objective, ternary top-k compression with error-feedback residuals
//! on both communication directions, and straggler-aware aggregation
//! coefficients, alongside FedAvg and FedProx baselines. Every stochastic
//! choice is keyed by `(seed, client, round, purpose)`, so runs are
//! bit-reproducible regardless of parallel scheduling.
//!
//! Modules:
//! - [`numkit`]: dense vectors and keyed random streams.
//! - [`models`]: linear/softmax regression and a one-hidden-layer MLP with
//!   hand-derived gradients and Fisher diagonals.
//! - [`data`]: IDX ingestion, non-IID partitioning, synthetic generators.
//! - [`compress`]: the sparsify-and-ternarize codec and bit accounting.
//! - [`fedcore`]: the round protocol and simulation driver.
//! - [`policies`]: closed-form quadratic oracles and decision rules.
//! - [`config`]: declarative experiment configs.

pub mod compress;
pub mod config;
pub mod data;
pub mod error;
pub mod fedcore;
pub mod models;
pub mod numkit;
pub mod policies;

pub use error::{Error, Result};
