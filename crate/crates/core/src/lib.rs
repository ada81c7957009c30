//! Deterministic federated-learning simulator: FedAvg with pluggable
//! defenses, a whole-population label-distribution inference attack, and a
//! two-phase (alignment + scaled injection) backdoor, plus a centralized
//! twin for weight-divergence measurements.

pub mod augment;
pub mod auxiliary;
pub mod config;
pub mod backdoor;
pub mod data;
pub mod defense;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
