//! Federated Koopman-reservoir learning for multivariate time-series anomaly
//! detection.
//!
//! A fixed leaky echo-state reservoir lifts each observation into a
//! higher-dimensional space through a trainable readout `W`. A Koopman
//! operator `K` advances lifted states linearly and a reconstruction matrix
//! `V` maps them back (`x̂ = Vᵀ φ`). Clients fit `K` on one-step transitions
//! (inner problem) and refine `W`, `V` on multi-step mode reconstructions
//! driven by the eigenvalues of the aggregated `K` (outer problem). The server
//! blends client updates with a momentum factor and keeps `ρ(K)` below a
//! target by direct scaling.
//!
//! Module map:
//!
//! * [`data`]: CSV ingestion, z-scoring, Dirichlet partitioning, batching and
//!   the synthetic linear-system generator.
//! * [`reservoir`]: the shared reservoir bank and the readout lift.
//! * [`koopman`]: spectral radius, projection, eigendecomposition, prediction.
//! * [`bilevel`]: inner/outer losses with analytic gradients, Adam, local solves.
//! * [`federated`]: client sampling, momentum aggregation, the round loop.
//! * [`detect`]: anomaly scores, thresholds, point adjustment, metrics.
//! * [`config`], [`bundle`], [`pipeline`]: configuration, model bundles and the
//!   end-to-end entry points used by the command line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bilevel;
pub mod bundle;
pub mod config;
pub mod data;
pub mod detect;
mod error;
pub mod federated;
pub mod koopman;
mod linalg;
pub mod par;
pub mod pipeline;
pub mod reservoir;
pub mod seed;

pub use error::{Error, Result};
