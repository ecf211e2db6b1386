//! Chromatic networks: compact reinforcement-learning policies whose weight
//! matrices are defined by learned edge partitionings. Shared weights are
//! trained with distributed evolution strategies while the partitionings are
//! sampled from an autoregressive controller trained with REINFORCE.
//!
//! The crate is organized around the training pipeline:
//! * [`topology`]: policy architectures and the five weight
//!   parameterizations (chromatic, Toeplitz, circulant, masked, unstructured);
//! * [`controller`]: the recurrent partition sampler and its REINFORCE update;
//! * [`es`]: seed-based Gaussian perturbations and the forward
//!   finite-difference gradient estimator;
//! * [`envs`]: built-in continuous-control environments and the rollout engine;
//! * [`orchestrator`]: the alternating-optimization loop, worker pools
//!   (in-process and TCP), checkpoints, and baselines;
//! * [`analysis`]: partition metrics and displacement-rank diagnostics.

pub mod analysis;
pub mod controller;
pub mod envs;
pub mod error;
pub mod es;
pub mod matrix;
pub mod orchestrator;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
