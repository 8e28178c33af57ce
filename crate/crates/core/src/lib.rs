//! Simulation of off-chain smart-contract execution by pools of trusted enclaves,
//! arbitrated by an on-chain manager.

pub mod analysis;
pub mod chain;
pub mod codec;
pub mod contracts;
pub mod crypto;
pub mod enclave;
pub mod harness;
pub mod manager;
pub mod messages;
pub mod timeouts;

/// Probability in machine floating point.
pub type Probability = f64;
/// Probability as an exact rational.
pub type ExactProbability = num_rational::BigRational;
