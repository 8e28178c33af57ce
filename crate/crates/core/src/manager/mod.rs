//! The on-chain manager: enclave registry, per-contract records, coin flow and
//! the challenge/response/timeout flows, each guarded by [`validate::check`].

pub mod validate;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::{BlockContext, Coins, Height, OnChainState, RelevantTx};
use crate::crypto::{digest_of, Digest, KeyRing, PartyId, Signed};
use crate::messages::{
    Confirm, ContractId, CreateRequest, CreationStatement, Deposit, ExecuteEnvelope, ExecutionResult, FinalizeKind,
    InitAnnouncement, InitConfirm, ManagerCall, Registration, Update, Withdraw,
};
use crate::timeouts::TimeoutConfig;

pub use validate::{check, validate, ValidationEnv, Violation};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChallengeMessage {
    Execute(Box<ExecuteEnvelope>),
    Create(CreateRequest),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WatchMessage {
    Update(Signed<Update>),
    Init(Signed<InitAnnouncement>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WatchResponse {
    Confirm(Signed<Confirm>),
    InitConfirm(Signed<InitConfirm>),
}

impl WatchResponse {
    pub fn signer(&self) -> PartyId {
        match self {
            WatchResponse::Confirm(m) => m.signer,
            WatchResponse::InitConfirm(m) => m.signer,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecChallenge {
    pub msg: Option<ChallengeMessage>,
    pub res: Option<Signed<ExecutionResult>>,
    pub block: Option<Height>,
    /// Dynamic-mode extension granted to the running challenge, in blocks.
    pub extension: u64,
    pub watchdog_extensions: u8,
    pub kick_extensions: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchChallenge {
    pub msg: Option<WatchMessage>,
    /// At most one response per signer.
    pub res: Vec<WatchResponse>,
    pub block: Option<Height>,
}

impl WatchChallenge {
    pub fn responders(&self) -> Vec<PartyId> {
        self.res.iter().map(|r| r.signer()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerRecord {
    /// Set while the contract is being created.
    pub creator: Option<PartyId>,
    pub code_hash: Digest,
    /// `None` until a pool is known, either provisionally from a pool challenge
    /// or finally from the creation statement.
    pub pool: Option<Vec<PartyId>>,
    pub balance: Coins,
    pub payout_level: u64,
    pub created_at: Height,
    pub exec_chal: ExecChallenge,
    pub watch_chal: WatchChallenge,
    pub deposited: Coins,
    pub paid: Coins,
}

impl ManagerRecord {
    pub fn new(creator: PartyId, code_hash: Digest, created_at: Height) -> Self {
        ManagerRecord {
            creator: Some(creator),
            code_hash,
            pool: None,
            balance: 0,
            payout_level: 0,
            created_at,
            exec_chal: ExecChallenge::default(),
            watch_chal: WatchChallenge::default(),
            deposited: 0,
            paid: 0,
        }
    }

    pub fn executor(&self) -> Option<PartyId> {
        self.pool.as_ref().and_then(|p| p.first().copied())
    }

    pub fn is_live(&self) -> bool {
        self.creator.is_none() && self.pool.as_ref().is_some_and(|p| !p.is_empty())
    }

    pub fn is_crashed(&self) -> bool {
        self.pool.as_ref().is_some_and(|p| p.is_empty())
    }

    pub fn pool_members(&self) -> &[PartyId] {
        self.pool.as_deref().unwrap_or(&[])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerConfig {
    pub timeouts: TimeoutConfig,
    /// Maximum age of registration evidence, in blocks.
    pub evidence_slack: u64,
    pub program_digest: Digest,
    pub platform: PartyId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// The real manager; every block hash lookup must succeed.
    Authority,
    /// An enclave's reconstruction; hashes of blocks before its checkpoint are unknown and trusted.
    Replica,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManagerError {
    #[error("call data does not parse")]
    Unparsable,
    #[error("malformed call: {0}")]
    Malformed(&'static str),
    #[error("attached value does not match the call")]
    ValueMismatch,
    #[error("attestation quote invalid")]
    BadAttestation,
    #[error("blockchain evidence stale or unknown")]
    StaleEvidence,
    #[error("bad signature")]
    BadSignature,
    #[error("enclave already registered")]
    AlreadyRegistered,
    #[error("enclave not registered")]
    UnknownEnclave,
    #[error("no such contract")]
    NoSuchContract,
    #[error("validation failed: {0}")]
    ValidationFailed(Violation),
    #[error("too late")]
    TooLate,
    #[error("not expired")]
    NotExpired,
    #[error("wrong payout level")]
    WrongLevel,
    #[error("signer is not the executor")]
    NotExecutor,
    #[error("payout exceeds balance")]
    Overdraw,
}

impl From<Violation> for ManagerError {
    fn from(v: Violation) -> Self {
        match v {
            Violation::NoRecord => ManagerError::NoSuchContract,
            Violation::TooLate => ManagerError::TooLate,
            Violation::NotExpired => ManagerError::NotExpired,
            Violation::BadSignature => ManagerError::BadSignature,
            Violation::NotExecutor => ManagerError::NotExecutor,
            other => ManagerError::ValidationFailed(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManagerReceipt {
    Registered(PartyId),
    Created(ContractId),
    CreationFinalized { cid: ContractId, pool: Vec<PartyId> },
    CreationFailed(ContractId),
    Deposited { cid: ContractId, coins: Coins },
    PaidOut { cid: ContractId, level: u64, total: Coins },
    ExecutorChallenged(ContractId),
    ExecutorAnswered(ContractId),
    ExecutorKicked { cid: ContractId, removed: PartyId },
    WatchdogsChallenged(ContractId),
    WatchdogConfirmed { cid: ContractId, by: PartyId },
    WatchdogsKicked { cid: ContractId, removed: Vec<PartyId> },
    CreatorChallenged(ContractId),
    CreatorTimedOut(ContractId),
    CreationPoolChallenged(ContractId),
    CreationPoolConfirmed { cid: ContractId, by: PartyId },
    CreationPoolSettled { cid: ContractId, removed: Vec<PartyId> },
}

#[derive(Clone, Debug)]
pub struct Manager {
    config: ManagerConfig,
    mode: Mode,
    ring: Arc<KeyRing>,
    tees: Vec<PartyId>,
    contracts: BTreeMap<ContractId, ManagerRecord>,
    credits: BTreeMap<PartyId, Coins>,
}

#[derive(Serialize)]
struct Committed<'a> {
    tees: &'a [PartyId],
    contracts: &'a BTreeMap<ContractId, ManagerRecord>,
    credits: &'a BTreeMap<PartyId, Coins>,
}

fn distinct(pool: &[PartyId]) -> bool {
    pool.iter().enumerate().all(|(i, p)| !pool[..i].contains(p))
}

impl Manager {
    pub fn new(config: ManagerConfig, ring: Arc<KeyRing>) -> Self {
        Manager { config, mode: Mode::Authority, ring, tees: vec![], contracts: BTreeMap::new(), credits: BTreeMap::new() }
    }

    pub fn replica(config: ManagerConfig, ring: Arc<KeyRing>) -> Self {
        Manager { mode: Mode::Replica, ..Manager::new(config, ring) }
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.config
    }

    pub fn tees(&self) -> &[PartyId] {
        &self.tees
    }

    pub fn record(&self, cid: ContractId) -> Option<&ManagerRecord> {
        self.contracts.get(&cid)
    }

    pub fn contracts(&self) -> &BTreeMap<ContractId, ManagerRecord> {
        &self.contracts
    }

    /// Coins paid out to `party` across all contracts.
    pub fn credited(&self, party: &PartyId) -> Coins {
        self.credits.get(party).copied().unwrap_or(0)
    }

    /// Same state regardless of mode.
    pub fn same_state(&self, other: &Manager) -> bool {
        self.tees == other.tees && self.contracts == other.contracts && self.credits == other.credits
    }

    fn env(&self, latest: Height) -> ValidationEnv<'_> {
        ValidationEnv { latest, timeouts: &self.config.timeouts, ring: &self.ring }
    }

    fn guard(&self, case: u8, call: Option<&ManagerCall>, cid: ContractId, latest: Height) -> Result<(), ManagerError> {
        check(case, call, self.contracts.get(&cid), &self.env(latest)).map_err(ManagerError::from)
    }

    fn rec(&mut self, cid: ContractId) -> &mut ManagerRecord {
        self.contracts.get_mut(&cid).expect("guarded by validation")
    }

    fn well_formed_pool(&self, pool: &[PartyId]) -> bool {
        distinct(pool) && pool.iter().all(|p| self.tees.contains(p))
    }

    pub fn execute(&mut self, call: &ManagerCall, _sender: PartyId, value: Coins, ctx: &BlockContext<'_>) -> Result<ManagerReceipt, ManagerError> {
        let is_deposit = matches!(call, ManagerCall::Deposit(_));
        if !is_deposit && value != 0 {
            return Err(ManagerError::ValueMismatch);
        }
        let latest = ctx.number;
        match call {
            ManagerCall::Register(m) => self.register(m, ctx),
            ManagerCall::InitCreation { creator, code_hash } => {
                if !self.tees.contains(creator) {
                    return Err(ManagerError::UnknownEnclave);
                }
                let cid = (0..).find(|c| !self.contracts.contains_key(c)).expect("ids are unbounded");
                self.contracts.insert(cid, ManagerRecord::new(*creator, *code_hash, latest));
                Ok(ManagerReceipt::Created(cid))
            }
            ManagerCall::FinalizeCreation(res) => self.finalize_creation(call, res, latest),
            ManagerCall::CreationFailed(res) => {
                let cid = res.payload.cid;
                self.guard(8, Some(call), cid, latest)?;
                let r = self.rec(cid);
                r.creator = None;
                r.pool = Some(vec![]);
                r.exec_chal.msg = None;
                r.exec_chal.block = None;
                r.watch_chal.msg = None;
                r.watch_chal.block = None;
                Ok(ManagerReceipt::CreationFailed(cid))
            }
            ManagerCall::Deposit(m) => self.deposit(m, value),
            ManagerCall::Payout(m) => self.payout(m),
            ManagerCall::ChallengeExecutor(env) => {
                let cid = env.cid();
                self.guard(1, Some(call), cid, latest)?;
                let r = self.rec(cid);
                r.exec_chal = ExecChallenge {
                    msg: Some(ChallengeMessage::Execute(Box::new(env.clone()))),
                    res: None,
                    block: Some(latest),
                    ..ExecChallenge::default()
                };
                Ok(ManagerReceipt::ExecutorChallenged(cid))
            }
            ManagerCall::ExecutorResponse(res) => {
                let cid = res.payload.cid;
                self.guard(2, Some(call), cid, latest)?;
                let r = self.rec(cid);
                r.exec_chal.msg = None;
                r.exec_chal.block = None;
                r.exec_chal.res = Some(res.clone());
                Ok(ManagerReceipt::ExecutorAnswered(cid))
            }
            ManagerCall::ChallengeWatchdogs(pre) => {
                let cid = pre.payload.cid;
                self.guard(4, Some(call), cid, latest)?;
                let dynamic = self.config.timeouts.dynamic;
                let r = self.rec(cid);
                r.watch_chal = WatchChallenge { msg: Some(WatchMessage::Update(pre.clone())), res: vec![], block: Some(latest) };
                if let Some(d) = dynamic {
                    if r.exec_chal.block.is_some() && r.exec_chal.watchdog_extensions < d.max_extensions {
                        r.exec_chal.watchdog_extensions += 1;
                        r.exec_chal.extension += d.watchdog_challenge_extension;
                    }
                }
                Ok(ManagerReceipt::WatchdogsChallenged(cid))
            }
            ManagerCall::WatchdogResponse(conf) => {
                let cid = conf.payload.cid;
                self.guard(5, Some(call), cid, latest)?;
                let r = self.rec(cid);
                if !r.watch_chal.responders().contains(&conf.signer) {
                    r.watch_chal.res.push(WatchResponse::Confirm(conf.clone()));
                }
                Ok(ManagerReceipt::WatchdogConfirmed { cid, by: conf.signer })
            }
            ManagerCall::ChallengeCreator(m) => {
                self.guard(7, Some(call), m.cid, latest)?;
                let r = self.rec(m.cid);
                r.exec_chal = ExecChallenge {
                    msg: Some(ChallengeMessage::Create(m.clone())),
                    res: None,
                    block: Some(latest),
                    ..ExecChallenge::default()
                };
                Ok(ManagerReceipt::CreatorChallenged(m.cid))
            }
            ManagerCall::ChallengeCreationPool(pre) => {
                let cid = pre.payload.cid;
                if !self.well_formed_pool(&pre.payload.pool) || pre.payload.envelopes.len() != pre.payload.pool.len() {
                    return Err(ManagerError::Malformed("announced pool"));
                }
                self.guard(10, Some(call), cid, latest)?;
                let r = self.rec(cid);
                r.watch_chal = WatchChallenge { msg: Some(WatchMessage::Init(pre.clone())), res: vec![], block: Some(latest) };
                r.pool = Some(pre.payload.pool.clone());
                Ok(ManagerReceipt::CreationPoolChallenged(cid))
            }
            ManagerCall::CreationPoolResponse(conf) => {
                let cid = conf.payload.cid;
                self.guard(11, Some(call), cid, latest)?;
                let r = self.rec(cid);
                if !r.watch_chal.responders().contains(&conf.signer) {
                    r.watch_chal.res.push(WatchResponse::InitConfirm(conf.clone()));
                }
                Ok(ManagerReceipt::CreationPoolConfirmed { cid, by: conf.signer })
            }
            ManagerCall::Finalize { kind, cid } => self.finalize(*kind, *cid, latest),
        }
    }

    fn register(&mut self, m: &Signed<Registration>, ctx: &BlockContext<'_>) -> Result<ManagerReceipt, ManagerError> {
        if !self.ring.verify(m).is_ok() {
            return Err(ManagerError::BadSignature);
        }
        let reg = &m.payload;
        let quote = &reg.quote;
        if !self.ring.verify(quote).is_ok()
            || quote.signer != self.config.platform
            || quote.payload.enclave != reg.enclave
            || quote.payload.program_digest != self.config.program_digest
        {
            return Err(ManagerError::BadAttestation);
        }
        if !self.ring.verify(&reg.evidence).is_ok() || reg.evidence.signer != reg.enclave {
            return Err(ManagerError::BadAttestation);
        }
        let ev = &reg.evidence.payload;
        if ev.number >= ctx.number || ctx.number - ev.number > self.config.evidence_slack {
            return Err(ManagerError::StaleEvidence);
        }
        match (ctx.history.block_hash(ev.number), self.mode) {
            (Some(h), _) if h == ev.block_hash => {}
            (None, Mode::Replica) => {}
            _ => return Err(ManagerError::StaleEvidence),
        }
        if self.tees.contains(&reg.enclave) {
            return Err(ManagerError::AlreadyRegistered);
        }
        self.tees.push(reg.enclave);
        Ok(ManagerReceipt::Registered(reg.enclave))
    }

    fn finalize_creation(&mut self, call: &ManagerCall, res: &Signed<CreationStatement>, latest: Height) -> Result<ManagerReceipt, ManagerError> {
        let cid = res.payload.cid;
        let pool = &res.payload.pool;
        if !self.well_formed_pool(pool) {
            return Err(ManagerError::Malformed("creation pool"));
        }
        if let Some(provisional) = self.contracts.get(&cid).and_then(|r| r.pool.as_ref()) {
            if !pool.iter().all(|p| provisional.contains(p)) {
                return Err(ManagerError::Malformed("creation pool outside settled pool"));
            }
        }
        self.guard(8, Some(call), cid, latest)?;
        let r = self.rec(cid);
        r.creator = None;
        r.pool = Some(pool.clone());
        r.exec_chal.msg = None;
        r.exec_chal.block = None;
        r.watch_chal.msg = None;
        r.watch_chal.block = None;
        Ok(ManagerReceipt::CreationFinalized { cid, pool: pool.clone() })
    }

    fn deposit(&mut self, m: &Signed<Deposit>, value: Coins) -> Result<ManagerReceipt, ManagerError> {
        let cid = m.payload.cid;
        if !self.contracts.contains_key(&cid) {
            return Err(ManagerError::NoSuchContract);
        }
        if !self.ring.verify(m).is_ok() {
            return Err(ManagerError::BadSignature);
        }
        if value != m.payload.coins {
            return Err(ManagerError::ValueMismatch);
        }
        let r = self.rec(cid);
        r.balance += value;
        r.deposited += value;
        Ok(ManagerReceipt::Deposited { cid, coins: value })
    }

    fn payout(&mut self, m: &Signed<Withdraw>) -> Result<ManagerReceipt, ManagerError> {
        let cid = m.payload.cid;
        let r = self.contracts.get(&cid).ok_or(ManagerError::NoSuchContract)?;
        if !self.ring.verify(m).is_ok() {
            return Err(ManagerError::BadSignature);
        }
        if r.creator.is_some() || r.executor() != Some(m.signer) {
            return Err(ManagerError::NotExecutor);
        }
        if m.payload.level != r.payout_level {
            return Err(ManagerError::WrongLevel);
        }
        let total = m
            .payload
            .withdrawals
            .iter()
            .try_fold(0u64, |acc, w| acc.checked_add(w.coins))
            .ok_or(ManagerError::Overdraw)?;
        if total > r.balance {
            return Err(ManagerError::Overdraw);
        }
        for w in &m.payload.withdrawals {
            *self.credits.entry(w.to).or_default() += w.coins;
        }
        let r = self.rec(cid);
        r.balance -= total;
        r.paid += total;
        r.payout_level += 1;
        Ok(ManagerReceipt::PaidOut { cid, level: m.payload.level, total })
    }

    fn finalize(&mut self, kind: FinalizeKind, cid: ContractId, latest: Height) -> Result<ManagerReceipt, ManagerError> {
        let creating = self.contracts.get(&cid).ok_or(ManagerError::NoSuchContract)?.creator.is_some();
        match (kind, creating) {
            (FinalizeKind::Executor, true) => {
                self.guard(9, None, cid, latest)?;
                self.rec(cid).pool = Some(vec![]);
                Ok(ManagerReceipt::CreatorTimedOut(cid))
            }
            (FinalizeKind::Executor, false) => {
                if self.contracts[&cid].pool_members().is_empty() {
                    return Err(ManagerError::Malformed("contract has crashed"));
                }
                self.guard(3, None, cid, latest)?;
                let r = self.rec(cid);
                let removed = r.pool.as_mut().expect("checked non-empty").remove(0);
                r.exec_chal.block = None;
                r.exec_chal.extension = 0;
                r.exec_chal.watchdog_extensions = 0;
                r.exec_chal.kick_extensions = 0;
                Ok(ManagerReceipt::ExecutorKicked { cid, removed })
            }
            (FinalizeKind::Watchdogs, true) => {
                self.guard(12, None, cid, latest)?;
                let r = self.rec(cid);
                let ok = r.watch_chal.responders();
                let posted = r.pool.take().unwrap_or_default();
                let (kept, removed): (Vec<_>, Vec<_>) = posted.into_iter().partition(|p| ok.contains(p));
                r.pool = Some(kept);
                r.watch_chal.msg = None;
                r.watch_chal.block = None;
                Ok(ManagerReceipt::CreationPoolSettled { cid, removed })
            }
            (FinalizeKind::Watchdogs, false) => {
                self.guard(6, None, cid, latest)?;
                let dynamic = self.config.timeouts.dynamic;
                let r = self.rec(cid);
                let ok = r.watch_chal.responders();
                let pool = r.pool.take().unwrap_or_default();
                let (kept, removed): (Vec<_>, Vec<_>) =
                    pool.into_iter().enumerate().partition(|(i, p)| *i == 0 || ok.contains(p));
                r.pool = Some(kept.into_iter().map(|(_, p)| p).collect());
                r.watch_chal.block = None;
                let removed: Vec<_> = removed.into_iter().map(|(_, p)| p).collect();
                if let Some(d) = dynamic {
                    if !removed.is_empty() && r.exec_chal.block.is_some() && r.exec_chal.kick_extensions < d.max_extensions {
                        r.exec_chal.kick_extensions += 1;
                        r.exec_chal.extension += d.kick_extension;
                    }
                }
                Ok(ManagerReceipt::WatchdogsKicked { cid, removed })
            }
        }
    }
}

impl OnChainState for Manager {
    type Receipt = ManagerReceipt;
    type Rejection = ManagerError;

    fn apply(&mut self, tx: &RelevantTx, ctx: &BlockContext<'_>) -> Result<ManagerReceipt, ManagerError> {
        let call = ManagerCall::from_tx(tx).map_err(|_| ManagerError::Unparsable)?;
        self.execute(&call, tx.sender, tx.value, ctx)
    }

    fn commitment(&self) -> Digest {
        digest_of(&Committed { tees: &self.tees, contracts: &self.contracts, credits: &self.credits })
    }
}
