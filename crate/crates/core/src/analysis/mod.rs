//! Crash and liveness probabilities of randomly sampled execution pools,
//! their Monte Carlo check, and metrics extracted from traces.

mod liveness;
mod metrics;
mod monte_carlo;
mod sweep;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

pub use liveness::{crash_probability, crash_probability_exact, liveness_epsilon, liveness_epsilon_exact, system_no_crash_prob};
pub use metrics::{measure, ContractMetrics, Metrics, MetricsError, RequestMetrics};
pub use monte_carlo::{monte_carlo_crash, wilson_interval, CrashEstimate, Z95};
pub use sweep::{sweep, to_csv, to_json, SweepGrid, SweepRow};

/// Floating-point type the analysis can be carried out in.
pub trait Scalar: Float + FromPrimitive + Debug + Send + Sync + 'static {}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Send + Sync + 'static {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LivenessQuery {
    /// Registered enclaves.
    pub n: u64,
    /// Enclaves run by byzantine operators.
    pub m: u64,
    /// Pool size.
    pub s: u64,
    /// Number of contracts for the system-wide figure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contracts: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("need 0 <= m <= n, got m = {m}, n = {n}")]
    Byzantine { n: u64, m: u64 },
    #[error("need 1 <= s <= n, got s = {s}, n = {n}")]
    PoolSize { n: u64, s: u64 },
    #[error("need at least one trial")]
    NoTrials,
}

impl LivenessQuery {
    pub fn new(n: u64, m: u64, s: u64) -> Result<Self, DomainError> {
        let q = LivenessQuery { n, m, s, contracts: None };
        q.validate()?;
        Ok(q)
    }

    pub fn with_contracts(self, k: u64) -> Self {
        LivenessQuery { contracts: Some(k), ..self }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.m > self.n {
            return Err(DomainError::Byzantine { n: self.n, m: self.m });
        }
        if self.s == 0 || self.s > self.n {
            return Err(DomainError::PoolSize { n: self.n, s: self.s });
        }
        Ok(())
    }
}
