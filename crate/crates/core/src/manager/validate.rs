//! The twelve guard conjunctions the manager evaluates before every mutation.
//!
//! `⊥` deadlines never satisfy a "still in time" or "expired" comparison, with
//! one exception: an INIT statement (case 8) is in time when no creator
//! challenge is running, since that is the ordinary creation path.

use crate::chain::Height;
use crate::crypto::{KeyRing, PartyId};
use crate::messages::ManagerCall;
use crate::timeouts::TimeoutConfig;

use super::{ChallengeMessage, ManagerRecord, WatchMessage};

pub struct ValidationEnv<'a> {
    pub latest: Height,
    pub timeouts: &'a TimeoutConfig,
    pub ring: &'a KeyRing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("no such contract")]
    NoRecord,
    #[error("message does not parse for this case")]
    Parse,
    #[error("contract is still being created")]
    CreatorSet,
    #[error("contract is not in creation")]
    CreatorUnset,
    #[error("a challenge is already running")]
    ChallengeRunning,
    #[error("no challenge is running")]
    NoChallenge,
    #[error("hash does not match the challenge")]
    HashMismatch,
    #[error("challenge deadline has passed")]
    TooLate,
    #[error("challenge deadline has not passed")]
    NotExpired,
    #[error("signature does not verify")]
    BadSignature,
    #[error("signer is not the executor")]
    NotExecutor,
    #[error("signer is not a pool member")]
    NotPoolMember,
    #[error("code does not match the registered hash")]
    CodeMismatch,
    #[error("signer is not the creator")]
    NotCreator,
}

fn require(cond: bool, v: Violation) -> Result<(), Violation> {
    if cond {
        Ok(())
    } else {
        Err(v)
    }
}

fn in_time(block: Option<Height>, timeout: u64, latest: Height, bottom_ok: bool) -> bool {
    match block {
        Some(b) => b + timeout > latest,
        None => bottom_ok,
    }
}

fn expired(block: Option<Height>, timeout: u64, latest: Height) -> bool {
    matches!(block, Some(b) if b + timeout <= latest)
}

fn is_executor(c: &ManagerRecord, t: &PartyId) -> bool {
    c.pool.as_ref().and_then(|p| p.first()) == Some(t)
}

fn in_pool(c: &ManagerRecord, t: &PartyId) -> bool {
    c.pool.as_ref().is_some_and(|p| p.contains(t))
}

/// Executor-challenge window, including any dynamic extensions granted so far.
pub fn execution_timeout(c: &ManagerRecord, timeouts: &TimeoutConfig) -> u64 {
    match timeouts.dynamic {
        Some(d) => d.initial_execution + c.exec_chal.extension,
        None => timeouts.onchain_execution + c.exec_chal.extension,
    }
}

pub fn check(case: u8, msg: Option<&ManagerCall>, record: Option<&ManagerRecord>, env: &ValidationEnv<'_>) -> Result<(), Violation> {
    let c = record.ok_or(Violation::NoRecord)?;
    let latest = env.latest;
    let t = env.timeouts;
    match case {
        1 => {
            let Some(ManagerCall::ChallengeExecutor(m)) = msg else { return Err(Violation::Parse) };
            require(c.creator.is_none(), Violation::CreatorSet)?;
            require(c.exec_chal.block.is_none(), Violation::ChallengeRunning)?;
            require(env.ring.verify(&m.request).is_ok(), Violation::BadSignature)
        }
        2 => {
            let Some(ManagerCall::ExecutorResponse(res)) = msg else { return Err(Violation::Parse) };
            require(c.creator.is_none(), Violation::CreatorSet)?;
            let challenged = match &c.exec_chal.msg {
                Some(ChallengeMessage::Execute(env)) => Some(env.hash()),
                _ => None,
            };
            require(challenged == Some(res.payload.h), Violation::HashMismatch)?;
            require(in_time(c.exec_chal.block, execution_timeout(c, t), latest, false), Violation::TooLate)?;
            require(env.ring.verify(res).is_ok(), Violation::BadSignature)?;
            require(is_executor(c, &res.signer), Violation::NotExecutor)
        }
        3 => {
            require(c.creator.is_none(), Violation::CreatorSet)?;
            require(c.exec_chal.msg.is_some(), Violation::NoChallenge)?;
            require(expired(c.exec_chal.block, execution_timeout(c, t), latest), Violation::NotExpired)
        }
        4 => {
            let Some(ManagerCall::ChallengeWatchdogs(pre)) = msg else { return Err(Violation::Parse) };
            require(c.creator.is_none(), Violation::CreatorSet)?;
            require(c.watch_chal.block.is_none(), Violation::ChallengeRunning)?;
            require(is_executor(c, &pre.signer), Violation::NotExecutor)?;
            require(env.ring.verify(pre).is_ok(), Violation::BadSignature)
        }
        5 => {
            let Some(ManagerCall::WatchdogResponse(conf)) = msg else { return Err(Violation::Parse) };
            let Some(WatchMessage::Update(pre)) = &c.watch_chal.msg else { return Err(Violation::Parse) };
            require(c.creator.is_none(), Violation::CreatorSet)?;
            require(in_time(c.watch_chal.block, t.onchain_propagation, latest, false), Violation::TooLate)?;
            require(env.ring.verify(conf).is_ok(), Violation::BadSignature)?;
            require(conf.payload.h == pre.payload.h, Violation::HashMismatch)?;
            require(in_pool(c, &conf.signer), Violation::NotPoolMember)
        }
        6 => {
            require(c.creator.is_none(), Violation::CreatorSet)?;
            require(c.watch_chal.block.is_some(), Violation::NoChallenge)?;
            require(expired(c.watch_chal.block, t.onchain_propagation, latest), Violation::NotExpired)
        }
        7 => {
            let Some(ManagerCall::ChallengeCreator(m)) = msg else { return Err(Violation::Parse) };
            require(c.creator.is_some(), Violation::CreatorUnset)?;
            require(c.exec_chal.block.is_none(), Violation::ChallengeRunning)?;
            require(c.code_hash == crate::crypto::hash(&m.code), Violation::CodeMismatch)
        }
        8 => {
            let (signer, verified) = match msg {
                Some(ManagerCall::FinalizeCreation(res)) => (res.signer, env.ring.verify(res).is_ok()),
                Some(ManagerCall::CreationFailed(res)) => (res.signer, env.ring.verify(res).is_ok()),
                _ => return Err(Violation::Parse),
            };
            require(c.creator == Some(signer), Violation::NotCreator)?;
            require(in_time(c.exec_chal.block, t.onchain_creation, latest, true), Violation::TooLate)?;
            require(verified, Violation::BadSignature)
        }
        9 => {
            require(c.creator.is_some(), Violation::CreatorUnset)?;
            require(c.exec_chal.block.is_some(), Violation::NoChallenge)?;
            require(expired(c.exec_chal.block, t.onchain_creation, latest), Violation::NotExpired)
        }
        10 => {
            let Some(ManagerCall::ChallengeCreationPool(pre)) = msg else { return Err(Violation::Parse) };
            require(c.creator == Some(pre.signer), Violation::NotCreator)?;
            require(c.watch_chal.block.is_none(), Violation::ChallengeRunning)?;
            require(env.ring.verify(pre).is_ok(), Violation::BadSignature)
        }
        11 => {
            let Some(ManagerCall::CreationPoolResponse(conf)) = msg else { return Err(Violation::Parse) };
            require(c.creator.is_some(), Violation::CreatorUnset)?;
            require(c.watch_chal.block.is_some(), Violation::NoChallenge)?;
            require(
                in_time(c.watch_chal.block, t.onchain_creation_propagation, latest, false),
                Violation::TooLate,
            )?;
            require(env.ring.verify(conf).is_ok(), Violation::BadSignature)?;
            require(in_pool(c, &conf.signer), Violation::NotPoolMember)
        }
        12 => {
            require(c.creator.is_some(), Violation::CreatorUnset)?;
            require(c.watch_chal.block.is_some(), Violation::NoChallenge)?;
            require(
                expired(c.watch_chal.block, t.onchain_creation_propagation, latest),
                Violation::NotExpired,
            )
        }
        _ => Err(Violation::Parse),
    }
}

pub fn validate(case: u8, msg: Option<&ManagerCall>, record: Option<&ManagerRecord>, env: &ValidationEnv<'_>) -> bool {
    check(case, msg, record, env).is_ok()
}
