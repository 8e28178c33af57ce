//! Wire messages exchanged off-chain and the manager call set carried in
//! relevant transactions.

use serde::{Deserialize, Serialize};

use crate::chain::{Coins, Height, RelevantTx};
use crate::codec::{decode, encode, CodecError};
use crate::crypto::{digest_of, Ciphertext, Digest, PartyId, Signed, SymKey};

pub type ContractId = u64;

/// EXECUTE: the user's move sealed under a request key only the executor learns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecuteRequest {
    pub cid: ContractId,
    pub nonce: [u8; 32],
    pub sealed_move: Ciphertext,
}

/// Keys the user hands to whoever executes the request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestKeys {
    pub move_key: SymKey,
    pub result_key: SymKey,
}

/// A signed request plus the [`RequestKeys`] wrapped for one particular enclave.
/// Re-sending to a successor executor only re-wraps the keys, so the request
/// hash stays the same.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecuteEnvelope {
    pub request: Signed<ExecuteRequest>,
    pub keys: Ciphertext,
}

impl ExecuteEnvelope {
    pub fn hash(&self) -> Digest {
        request_hash(&self.request)
    }

    pub fn cid(&self) -> ContractId {
        self.request.payload.cid
    }
}

pub fn request_hash(req: &Signed<ExecuteRequest>) -> Digest {
    digest_of(req)
}

/// UPDATE: full encrypted contract state after executing request `h`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Update {
    pub cid: ContractId,
    pub state: Ciphertext,
    pub h: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirm {
    pub cid: ContractId,
    pub h: Digest,
}

/// OK: the public result, readable only with the user's result key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub cid: ContractId,
    pub sealed: Ciphertext,
    pub h: Digest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Applied,
    Dummy,
    Reverted,
}

/// Plaintext of [`ExecutionResult::sealed`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultBody {
    pub public_state: Vec<u8>,
    pub payout: Signed<Withdraw>,
    pub step: StepKind,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Withdrawal {
    pub coins: Coins,
    pub to: PartyId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Withdraw {
    pub cid: ContractId,
    pub level: u64,
    pub withdrawals: Vec<Withdrawal>,
}

impl Withdraw {
    pub fn total(&self) -> Coins {
        self.withdrawals.iter().map(|w| w.coins).sum()
    }
}

/// CREATE, sent by the user to the creator enclave. Not signed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub cid: ContractId,
    pub code: Vec<u8>,
}

/// INIT with the pool key wrapped once per pool member (same order as `pool`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitAnnouncement {
    pub cid: ContractId,
    pub pool: Vec<PartyId>,
    pub envelopes: Vec<Ciphertext>,
    pub code: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitConfirm {
    pub cid: ContractId,
}

/// The creator's final INIT statement that completes creation on-chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreationStatement {
    pub cid: ContractId,
    pub pool: Vec<PartyId>,
}

/// Fail confirmation for a creation the creator cannot complete.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreationFailure {
    pub cid: ContractId,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deposit {
    pub cid: ContractId,
    pub coins: Coins,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteBody {
    pub enclave: PartyId,
    pub program_digest: Digest,
}

/// Attestation quote, signed by the platform key.
pub type AttestationQuote = Signed<QuoteBody>;

/// Blockchain evidence: the checkpoint an enclave synchronized from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainEvidence {
    pub number: Height,
    pub block_hash: Digest,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub enclave: PartyId,
    pub quote: AttestationQuote,
    pub evidence: Signed<ChainEvidence>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FinalizeKind {
    /// Executor or creator challenge expired.
    Executor,
    /// Watchdog or creation-pool challenge expired.
    Watchdogs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManagerCall {
    Register(Signed<Registration>),
    InitCreation { creator: PartyId, code_hash: Digest },
    FinalizeCreation(Signed<CreationStatement>),
    CreationFailed(Signed<CreationFailure>),
    Deposit(Signed<Deposit>),
    Payout(Signed<Withdraw>),
    ChallengeExecutor(ExecuteEnvelope),
    ExecutorResponse(Signed<ExecutionResult>),
    ChallengeWatchdogs(Signed<Update>),
    WatchdogResponse(Signed<Confirm>),
    ChallengeCreator(CreateRequest),
    ChallengeCreationPool(Signed<InitAnnouncement>),
    CreationPoolResponse(Signed<InitConfirm>),
    Finalize { kind: FinalizeKind, cid: ContractId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CallKind {
    Register,
    InitCreation,
    FinalizeCreation,
    CreationFailed,
    Deposit,
    Payout,
    ChallengeExecutor,
    ExecutorResponse,
    ChallengeWatchdogs,
    WatchdogResponse,
    ChallengeCreator,
    ChallengeCreationPool,
    CreationPoolResponse,
    FinalizeExecutor,
    FinalizeWatchdogs,
}

impl CallKind {
    pub const ALL: [CallKind; 15] = [
        CallKind::Register,
        CallKind::InitCreation,
        CallKind::FinalizeCreation,
        CallKind::CreationFailed,
        CallKind::Deposit,
        CallKind::Payout,
        CallKind::ChallengeExecutor,
        CallKind::ExecutorResponse,
        CallKind::ChallengeWatchdogs,
        CallKind::WatchdogResponse,
        CallKind::ChallengeCreator,
        CallKind::ChallengeCreationPool,
        CallKind::CreationPoolResponse,
        CallKind::FinalizeExecutor,
        CallKind::FinalizeWatchdogs,
    ];

    pub fn from_name(name: &str) -> Option<CallKind> {
        CallKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            CallKind::Register => "register",
            CallKind::InitCreation => "init_creation",
            CallKind::FinalizeCreation => "finalize_creation",
            CallKind::CreationFailed => "creation_failed",
            CallKind::Deposit => "deposit",
            CallKind::Payout => "payout",
            CallKind::ChallengeExecutor => "challenge_executor",
            CallKind::ExecutorResponse => "executor_response",
            CallKind::ChallengeWatchdogs => "challenge_watchdogs",
            CallKind::WatchdogResponse => "watchdog_response",
            CallKind::ChallengeCreator => "challenge_creator",
            CallKind::ChallengeCreationPool => "challenge_creation_pool",
            CallKind::CreationPoolResponse => "creation_pool_response",
            CallKind::FinalizeExecutor => "finalize_executor",
            CallKind::FinalizeWatchdogs => "finalize_watchdogs",
        }
    }

    /// Calls that belong to a challenge round rather than the benign flow.
    pub fn is_challenge(self) -> bool {
        !matches!(
            self,
            CallKind::Register
                | CallKind::InitCreation
                | CallKind::FinalizeCreation
                | CallKind::CreationFailed
                | CallKind::Deposit
                | CallKind::Payout
        )
    }
}

impl ManagerCall {
    pub fn kind(&self) -> CallKind {
        match self {
            ManagerCall::Register(_) => CallKind::Register,
            ManagerCall::InitCreation { .. } => CallKind::InitCreation,
            ManagerCall::FinalizeCreation(_) => CallKind::FinalizeCreation,
            ManagerCall::CreationFailed(_) => CallKind::CreationFailed,
            ManagerCall::Deposit(_) => CallKind::Deposit,
            ManagerCall::Payout(_) => CallKind::Payout,
            ManagerCall::ChallengeExecutor(_) => CallKind::ChallengeExecutor,
            ManagerCall::ExecutorResponse(_) => CallKind::ExecutorResponse,
            ManagerCall::ChallengeWatchdogs(_) => CallKind::ChallengeWatchdogs,
            ManagerCall::WatchdogResponse(_) => CallKind::WatchdogResponse,
            ManagerCall::ChallengeCreator(_) => CallKind::ChallengeCreator,
            ManagerCall::ChallengeCreationPool(_) => CallKind::ChallengeCreationPool,
            ManagerCall::CreationPoolResponse(_) => CallKind::CreationPoolResponse,
            ManagerCall::Finalize { kind: FinalizeKind::Executor, .. } => CallKind::FinalizeExecutor,
            ManagerCall::Finalize { kind: FinalizeKind::Watchdogs, .. } => CallKind::FinalizeWatchdogs,
        }
    }

    /// Contract the call addresses. `InitCreation` learns its id only on inclusion.
    pub fn cid(&self) -> Option<ContractId> {
        Some(match self {
            ManagerCall::Register(_) | ManagerCall::InitCreation { .. } => return None,
            ManagerCall::FinalizeCreation(m) => m.payload.cid,
            ManagerCall::CreationFailed(m) => m.payload.cid,
            ManagerCall::Deposit(m) => m.payload.cid,
            ManagerCall::Payout(m) => m.payload.cid,
            ManagerCall::ChallengeExecutor(m) => m.cid(),
            ManagerCall::ExecutorResponse(m) => m.payload.cid,
            ManagerCall::ChallengeWatchdogs(m) => m.payload.cid,
            ManagerCall::WatchdogResponse(m) => m.payload.cid,
            ManagerCall::ChallengeCreator(m) => m.cid,
            ManagerCall::ChallengeCreationPool(m) => m.payload.cid,
            ManagerCall::CreationPoolResponse(m) => m.payload.cid,
            ManagerCall::Finalize { cid, .. } => *cid,
        })
    }

    pub fn to_tx(&self, sender: PartyId, value: Coins) -> RelevantTx {
        RelevantTx { data: encode(self), sender, value }
    }

    pub fn from_tx(tx: &RelevantTx) -> Result<ManagerCall, CodecError> {
        decode(&tx.data)
    }
}
