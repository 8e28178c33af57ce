//! Scenario files: population, chain and timeout parameters, adversaries and
//! the user workload.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainParams, Coins, Seconds};
use crate::contracts::rps::Hand;
use crate::contracts::ContractKind;
use crate::enclave::SyncParams;
use crate::timeouts::{ConfigInvalid, TimeoutConfig, TimingModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    /// Operators, each running one enclave.
    pub n: usize,
    pub pool_size: usize,
    #[serde(default = "default_users")]
    pub users: usize,
    #[serde(default)]
    pub chain: ChainParams,
    #[serde(default)]
    pub sync: SyncSettings,
    #[serde(default)]
    pub timeouts: TimeoutSettings,
    #[serde(default)]
    pub network: NetworkSettings,
    #[serde(default)]
    pub adversaries: Vec<Corruption>,
    pub workload: Vec<Action>,
    /// Hard stop in logical seconds after setup.
    #[serde(default = "default_horizon")]
    pub horizon: Seconds,
}

fn default_users() -> usize {
    2
}

fn default_horizon() -> Seconds {
    500_000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncSettings {
    pub mirror_depth: u64,
    pub rate_blocks: u64,
    pub rate_window: Seconds,
    pub max_header_lag: Seconds,
}

impl Default for SyncSettings {
    fn default() -> Self {
        let d = SyncParams::default();
        SyncSettings {
            mirror_depth: d.mirror_depth,
            rate_blocks: d.rate_blocks,
            rate_window: d.rate_window,
            max_header_lag: d.max_header_lag,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeoutSettings {
    /// Off-chain propagation wait; everything else is derived from it unless
    /// `explicit` is given.
    pub offchain_propagation: Seconds,
    pub dynamic: bool,
    pub explicit: Option<TimeoutConfig>,
}

impl Default for TimeoutSettings {
    fn default() -> Self {
        TimeoutSettings { offchain_propagation: 60, dynamic: false, explicit: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSettings {
    /// Delivery delay between honest parties.
    pub delay: Seconds,
    /// Seconds between an honest operator's chain feeds; `None` feeds every block.
    pub feed_interval: Option<Seconds>,
    /// Transactions land uniformly within this many blocks (at most alpha).
    pub max_inclusion_delay: u64,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        NetworkSettings { delay: 0, feed_interval: None, max_inclusion_delay: 1 }
    }
}

/// Which operator the adversary controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Operator(usize),
    /// Whoever ends up at `position` of the pool of the `contract`-th created
    /// contract. The corruption is static; it only takes effect once the pool
    /// is on chain.
    Pool { contract: usize, position: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    pub target: Target,
    #[serde(default)]
    pub policy: AdversaryPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    Execute,
    Update,
    Confirm,
    Result,
    Create,
    Init,
    InitConfirm,
}

impl MsgKind {
    pub const ALL: [MsgKind; 7] =
        [MsgKind::Execute, MsgKind::Update, MsgKind::Confirm, MsgKind::Result, MsgKind::Create, MsgKind::Init, MsgKind::InitConfirm];
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropRule {
    #[default]
    Nothing,
    All,
    Kinds(BTreeSet<MsgKind>),
}

impl DropRule {
    pub fn drops(&self, kind: MsgKind) -> bool {
        match self {
            DropRule::Nothing => false,
            DropRule::All => true,
            DropRule::Kinds(k) => k.contains(&kind),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidechainAttack {
    /// Seconds after setup when the operator switches its enclave over.
    pub at: Seconds,
    /// How many honest blocks the fork replaces.
    pub depth: u64,
    /// Attacker block interval.
    pub interval: Seconds,
}

/// I/O behaviour of a byzantine operator. Its enclave is never touched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversaryPolicy {
    /// Off-chain messages to or from this operator that are discarded.
    pub drop: DropRule,
    /// Extra delay on everything it does forward.
    pub delay: Seconds,
    /// Whether it submits and answers on-chain calls at all.
    pub onchain: bool,
    /// As executor, forward UPDATE only to these pool positions.
    pub update_to: Option<Vec<usize>>,
    /// Stop feeding fresh blocks this many seconds after setup.
    pub withhold_blocks_after: Option<Seconds>,
    pub sidechain: Option<SidechainAttack>,
    /// Re-feed every EXECUTE its enclave completes.
    pub replay: bool,
}

impl Default for AdversaryPolicy {
    fn default() -> Self {
        AdversaryPolicy {
            drop: DropRule::Nothing,
            delay: 0,
            onchain: true,
            update_to: None,
            withhold_blocks_after: None,
            sidechain: None,
            replay: false,
        }
    }
}

impl AdversaryPolicy {
    /// Ignores all off-chain traffic but still answers challenges on chain.
    pub fn onchain_only() -> Self {
        AdversaryPolicy { drop: DropRule::All, ..AdversaryPolicy::default() }
    }

    pub fn silent() -> Self {
        AdversaryPolicy { drop: DropRule::All, onchain: false, ..AdversaryPolicy::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveSpec {
    Increment,
    Add(u64),
    Spin(u64),
    Play(Hand),
    Release { to_user: usize, coins: Coins },
    Refund,
    SortFixed,
    SortShuffled,
}

impl MoveSpec {
    pub fn fits(&self, kind: ContractKind) -> bool {
        matches!(
            (self, kind),
            (MoveSpec::Increment | MoveSpec::Add(_) | MoveSpec::Spin(_), ContractKind::Counter)
                | (MoveSpec::Play(_), ContractKind::Rps)
                | (MoveSpec::Release { .. } | MoveSpec::Refund, ContractKind::Escrow)
                | (MoveSpec::SortFixed | MoveSpec::SortShuffled, ContractKind::Quicksort)
        )
    }
}

/// One user action. `at` is the earliest time, in seconds after setup; actions
/// on a contract that is not live yet wait for it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Create { at: Seconds, user: usize, kind: ContractKind, creator: usize },
    /// Like `Create` but with code no enclave knows.
    CreateUnknown { at: Seconds, user: usize, creator: usize },
    Deposit { at: Seconds, user: usize, contract: usize, coins: Coins },
    Execute {
        at: Seconds,
        user: usize,
        contract: usize,
        #[serde(rename = "move")]
        mv: MoveSpec,
    },
    /// Post the latest withdrawal the user received for the contract.
    Payout { at: Seconds, user: usize, contract: usize },
}

impl Action {
    pub fn at(&self) -> Seconds {
        match self {
            Action::Create { at, .. }
            | Action::CreateUnknown { at, .. }
            | Action::Deposit { at, .. }
            | Action::Execute { at, .. }
            | Action::Payout { at, .. } => *at,
        }
    }

    pub fn user(&self) -> usize {
        match self {
            Action::Create { user, .. }
            | Action::CreateUnknown { user, .. }
            | Action::Deposit { user, .. }
            | Action::Execute { user, .. }
            | Action::Payout { user, .. } => *user,
        }
    }

    pub fn contract(&self) -> Option<usize> {
        match self {
            Action::Deposit { contract, .. } | Action::Execute { contract, .. } | Action::Payout { contract, .. } => {
                Some(*contract)
            }
            _ => None,
        }
    }

    pub fn creates(&self) -> bool {
        matches!(self, Action::Create { .. } | Action::CreateUnknown { .. })
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ConfigInvalid> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ConfigInvalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn sync_params(&self) -> SyncParams {
        SyncParams {
            chain: self.chain,
            mirror_depth: self.sync.mirror_depth,
            rate_blocks: self.sync.rate_blocks,
            rate_window: self.sync.rate_window,
            max_header_lag: self.sync.max_header_lag,
        }
    }

    pub fn timing_model(&self) -> TimingModel {
        TimingModel { chain: self.chain, mirror_depth: self.sync.mirror_depth }
    }

    pub fn timeout_config(&self) -> Result<TimeoutConfig, ConfigInvalid> {
        let model = self.timing_model();
        let t = match self.timeouts.explicit {
            Some(t) => t,
            None => {
                let t = TimeoutConfig::derive(&model, self.timeouts.offchain_propagation);
                if self.timeouts.dynamic {
                    t.with_dynamic(&model)
                } else {
                    t
                }
            }
        };
        t.validate(&model)?;
        Ok(t)
    }

    /// Number of distinct corrupted operators or pool slots.
    pub fn byzantine(&self) -> usize {
        self.adversaries.iter().map(|c| c.target).collect::<BTreeSet<_>>().len()
    }

    fn contract_kinds(&self) -> Vec<Option<ContractKind>> {
        self.workload
            .iter()
            .filter_map(|a| match a {
                Action::Create { kind, .. } => Some(Some(*kind)),
                Action::CreateUnknown { .. } => Some(None),
                _ => None,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let bad = |m: String| Err(ConfigInvalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.n == 0 || self.pool_size == 0 || self.pool_size > self.n {
            return bad(format!("need 1 <= pool_size <= n, got s = {}, n = {}", self.pool_size, self.n));
        }
        if self.byzantine() > self.n {
            return bad("more corruptions than operators".into());
        }
        if self.users == 0 {
            return bad("need at least one user".into());
        }
        if self.chain.block_time_jitter >= self.chain.block_time || self.chain.gamma == 0 || self.chain.alpha == 0 {
            return bad("chain needs 0 <= jitter < block_time and positive alpha, gamma".into());
        }
        if self.sync.mirror_depth < self.chain.gamma {
            return bad("mirror_depth must be at least gamma".into());
        }
        if self.sync.rate_blocks == 0 || self.sync.rate_window == 0 {
            return bad("rate rule needs positive L and tau_p".into());
        }
        if self.sync.mirror_depth < 2 * self.sync.rate_blocks {
            return bad("mirror_depth must be at least twice rate_blocks".into());
        }
        if self.sync.max_header_lag < self.chain.max_interval() {
            return bad("max_header_lag below the longest block interval".into());
        }
        if self.network.feed_interval.is_some_and(|f| f == 0 || f + self.chain.max_interval() > self.sync.max_header_lag) {
            return bad("feed_interval must be positive and keep views within max_header_lag".into());
        }
        if self.network.max_inclusion_delay == 0 || self.network.max_inclusion_delay > self.chain.alpha {
            return bad("max_inclusion_delay must lie in 1..=alpha".into());
        }
        self.timeout_config()?;
        let kinds = self.contract_kinds();
        for c in &self.adversaries {
            match c.target {
                Target::Operator(i) if i >= self.n => return bad(format!("adversary targets operator {i}")),
                Target::Pool { contract, position } if contract >= kinds.len() || position >= self.pool_size => {
                    return bad(format!("adversary targets pool slot {position} of contract {contract}"));
                }
                _ => {}
            }
            if let Some(p) = &c.policy.update_to {
                if p.iter().any(|i| *i == 0 || *i >= self.pool_size) {
                    return bad("update_to positions must be watchdogs (1..s)".into());
                }
            }
        }
        let mut created = 0;
        for (i, a) in self.workload.iter().enumerate() {
            if a.user() >= self.users {
                return bad(format!("action {i}: unknown user {}", a.user()));
            }
            match a {
                Action::Create { creator, .. } | Action::CreateUnknown { creator, .. } => {
                    if *creator >= self.n {
                        return bad(format!("action {i}: unknown creator {creator}"));
                    }
                    created += 1;
                }
                Action::Execute { contract, mv, .. } => {
                    // contracts are numbered in workload order, so a later Create cannot be referenced
                    let Some(kind) = kinds.get(*contract).filter(|_| *contract < created) else {
                        return bad(format!("action {i}: contract {contract} not created before"));
                    };
                    if kind.is_some_and(|k| !mv.fits(k)) {
                        return bad(format!("action {i}: move does not fit contract {contract}"));
                    }
                    if let MoveSpec::Release { to_user, .. } = mv {
                        if *to_user >= self.users {
                            return bad(format!("action {i}: unknown recipient {to_user}"));
                        }
                    }
                }
                Action::Deposit { contract, .. } | Action::Payout { contract, .. } => {
                    if *contract >= created {
                        return bad(format!("action {i}: contract {contract} not created before"));
                    }
                }
            }
        }
        Ok(())
    }
}
