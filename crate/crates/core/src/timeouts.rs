//! Timeout configuration and the relations between off-chain (seconds) and
//! on-chain (blocks) timeouts.
//!
//! Conversions are pessimistic in both directions: a duration `t` may span as
//! many as `ceil(t / min_interval)` blocks, and `b` blocks may take as long as
//! `b * max_interval` seconds.

use serde::{Deserialize, Serialize};

use crate::chain::{ChainParams, Seconds};

/// Worst-case time for a submitted transaction to be included, `alpha * tau`.
pub fn max_inclusion_delay(alpha: u64, tau: Seconds) -> Seconds {
    alpha * tau
}

/// Time for a kick to be included and become final, `(alpha + gamma) * tau`.
pub fn kick_settlement_delay(alpha: u64, gamma: u64, tau: Seconds) -> Seconds {
    (alpha + gamma) * tau
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicTimeouts {
    /// Executor-challenge deadline before any extension, in blocks.
    pub initial_execution: u64,
    /// Granted when the executor opens a watchdog challenge during an executor challenge.
    pub watchdog_challenge_extension: u64,
    /// Granted when a watchdog timeout kicks someone during an executor challenge.
    pub kick_extension: u64,
    pub max_extensions: u8,
    /// The user's shortened off-chain wait, in seconds.
    pub offchain_execution: Seconds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeoutConfig {
    pub offchain_execution: Seconds,
    pub offchain_propagation: Seconds,
    pub offchain_creation: Seconds,
    pub offchain_creation_propagation: Seconds,
    pub onchain_execution: u64,
    pub onchain_propagation: u64,
    pub onchain_creation: u64,
    pub onchain_creation_propagation: u64,
    #[serde(default)]
    pub dynamic: Option<DynamicTimeouts>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigInvalid(pub String);

/// What the relations need to know about the chain and the enclaves' view of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimingModel {
    pub chain: ChainParams,
    /// Depth at which enclaves apply manager transactions to their mirror.
    pub mirror_depth: u64,
}

impl TimingModel {
    pub fn blocks_spanned(&self, t: Seconds) -> u64 {
        t.div_ceil(self.chain.min_interval())
    }

    pub fn secs_for(&self, blocks: u64) -> Seconds {
        blocks * self.chain.max_interval()
    }

    /// One propagation round escalated to a watchdog challenge: wait, challenge
    /// inclusion, challenge window, kick inclusion, kick visible in the mirror.
    fn escalated_round(&self, offchain: Seconds, onchain: u64) -> Seconds {
        let a = self.chain.alpha;
        offchain + self.secs_for(2 * a + onchain + self.mirror_depth + 1)
    }

    fn mirror_lag(&self) -> Seconds {
        self.secs_for(self.mirror_depth + 1)
    }
}

impl TimeoutConfig {
    pub fn effective_offchain_execution(&self) -> Seconds {
        self.dynamic.map_or(self.offchain_execution, |d| d.offchain_execution)
    }

    /// Smallest configuration satisfying [`TimeoutConfig::validate`] for the
    /// given off-chain propagation wait.
    pub fn derive(model: &TimingModel, offchain_propagation: Seconds) -> Self {
        let a = model.chain.alpha;
        let on_prop = model.blocks_spanned(offchain_propagation) + a;
        let off_exec = model.mirror_lag() + 2 * model.escalated_round(offchain_propagation, on_prop);
        let off_create = model.mirror_lag() + model.escalated_round(offchain_propagation, on_prop);
        TimeoutConfig {
            offchain_execution: off_exec,
            offchain_propagation,
            offchain_creation: off_create,
            offchain_creation_propagation: offchain_propagation,
            onchain_execution: model.blocks_spanned(off_exec) + a,
            onchain_propagation: on_prop,
            onchain_creation: model.blocks_spanned(off_create) + a,
            onchain_creation_propagation: on_prop,
            dynamic: None,
        }
    }

    pub fn with_dynamic(mut self, model: &TimingModel) -> Self {
        let a = model.chain.alpha;
        let initial = (model.blocks_spanned(self.offchain_propagation) + a).max(self.onchain_propagation) + 1;
        self.dynamic = Some(DynamicTimeouts {
            initial_execution: initial,
            watchdog_challenge_extension: self.onchain_propagation,
            kick_extension: 2 * a + model.mirror_depth + 1,
            max_extensions: 2,
            offchain_execution: 2 * self.offchain_propagation + model.secs_for(a),
        });
        self
    }

    pub fn validate(&self, model: &TimingModel) -> Result<(), ConfigInvalid> {
        let a = model.chain.alpha;
        let mut problems = Vec::new();
        let mut need = |what: &str, have: u64, want: u64| {
            if have < want {
                problems.push(format!("{what} = {have} < {want}"));
            }
        };
        need("onchain_propagation", self.onchain_propagation, model.blocks_spanned(self.offchain_propagation) + a);
        need(
            "onchain_creation_propagation",
            self.onchain_creation_propagation,
            model.blocks_spanned(self.offchain_creation_propagation) + a,
        );
        need(
            "offchain_execution",
            self.offchain_execution,
            model.mirror_lag() + 2 * model.escalated_round(self.offchain_propagation, self.onchain_propagation),
        );
        need(
            "offchain_creation",
            self.offchain_creation,
            model.mirror_lag()
                + model.escalated_round(self.offchain_creation_propagation, self.onchain_creation_propagation),
        );
        need("onchain_execution", self.onchain_execution, model.blocks_spanned(self.offchain_execution) + a);
        need("onchain_creation", self.onchain_creation, model.blocks_spanned(self.offchain_creation) + a);
        if let Some(d) = self.dynamic {
            need(
                "dynamic.initial_execution",
                d.initial_execution,
                (model.blocks_spanned(self.offchain_propagation) + a).max(self.onchain_propagation) + 1,
            );
            need("dynamic.watchdog_challenge_extension", d.watchdog_challenge_extension, self.onchain_propagation);
            need("dynamic.kick_extension", d.kick_extension, 2 * a + model.mirror_depth + 1);
            need("dynamic.max_extensions", d.max_extensions as u64, 2);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigInvalid(problems.join("; ")))
        }
    }
}
