//! Lateral-movement detection over enterprise authentication logs.
//!
//! The pipeline ingests login events (`log_model`), strips automation and
//! noise (`filtering`), infers the causal movement paths behind each login
//! (`causality`), summarizes history into per-window indexes (`login_graph`),
//! and raises alerts for paths that look like an attacker moving with stolen
//! credentials (`detection`). A red-team simulator (`attack_sim`), a
//! rarity-based baseline detector (`sal`), and an evaluation harness with a
//! synthetic corpus generator (`harness`) close the loop for measurement.

pub mod attack_sim;
pub mod causality;
pub mod detection;
pub mod error;
pub mod filtering;
pub mod harness;
pub mod log_model;
pub mod login_graph;
pub mod sal;

pub use error::HopperError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, HopperError>;
