//! Bayesian-quadrature neural ensemble search over tabular architecture
//! benchmarks.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`search`] picks a candidate set of architectures. The main strategy is
//!    uncertainty sampling on a WSABI-L surrogate; regularised evolution, EI,
//!    and random search are the baselines.
//! 2. [`quadrature`] estimates the model evidence and an approximate posterior
//!    over the candidates.
//! 3. [`recombination`] or [`ensemble`] turns that posterior into an M-member
//!    weighted ensemble, which [`metrics`] scores on held-out predictions.
//!
//! A [`benchmark::BenchmarkTable`] stands in for network training: it holds
//! precomputed likelihoods and class-probability matrices for every
//! architecture.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archspace;
pub mod benchmark;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod metrics;
pub mod quadrature;
pub mod recombination;
pub mod search;
pub mod surrogate;

mod rng;

pub use archspace::{Architecture, ArchitectureId, SpaceConfig, SpaceKind};
pub use benchmark::{BenchmarkTable, PredictionMatrix, SyntheticGenConfig};
pub use ensemble::WeightedEnsemble;
pub use error::{Error, Result};
pub use kernels::{FeatureCache, Kernel, KernelHyperparams, KernelKind};
