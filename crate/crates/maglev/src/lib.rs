//! Simulation and learning workbench for magnetic-levitation air-gap control.
//!
//! The crate models a single suspension point of an EMS vehicle: a nonlinear
//! gap/current plant, classical PID and LQI regulators synthesized from the
//! linearized model, an MDP wrapper with a quadratic stage cost, small
//! from-scratch neural networks, and DDPG/TD3 learners driven by a CLI
//! harness.

pub mod agents;
pub mod config;
pub mod env;
pub mod harness;
pub mod linctrl;
pub mod nn;
pub mod plant;

use thiserror::Error;

/// Unified error type for every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical or algorithmic parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The plant state reached a configuration where the model is undefined.
    #[error("model singularity: {0}")]
    Singularity(String),

    /// A gain-synthesis routine could not produce a stabilizing result.
    #[error("synthesis failed: {0}")]
    Synthesis(String),

    /// An iterative solver exhausted its iteration budget.
    #[error("solver did not converge: {0}")]
    Solver(String),

    /// An API was called in the wrong lifecycle state (e.g. stepping a
    /// finished episode).
    #[error("lifecycle violation: {0}")]
    Lifecycle(String),

    /// Array/batch shapes or modes do not match what the operation needs.
    #[error("shape/mode violation: {0}")]
    Shape(String),

    /// A checkpoint could not be decoded or does not match the architecture.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A config file or dataset file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
