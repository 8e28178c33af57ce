//! Sequential replay of every accepted request against a fresh contract
//! instance, compared with what the surviving enclaves hold.

use std::collections::BTreeMap;

use crate::chain::{Height, TxOutcome};
use crate::codec::encode;
use crate::contracts::{ChainView, ContractRegistry, ContractState, LoggedCall};
use crate::crypto::Digest;
use crate::enclave::move_seed;
use crate::messages::{ContractId, ManagerCall, StepKind};

use super::scenario::{Action, Scenario};
use super::sim::{unknown_code, Outcome, Run};
use super::trace::Event;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Mismatch {
    #[error("contract {0}: pool members disagree on the state")]
    Diverged(ContractId),
    #[error("contract {0}: enclave state differs from the sequential replay")]
    Replay(ContractId),
    #[error("contract {0}: request {1} executed twice")]
    Duplicate(ContractId, String),
    #[error("contract {0}: answered request {1} missing from the state")]
    Lost(ContractId, String),
    #[error("contract {0}: request {1} in the state was never issued")]
    Unknown(ContractId, String),
    #[error("contract {0}: surviving pool member has no instance")]
    NoInstance(ContractId),
}

/// Accepted manager calls on the main chain, as an enclave logs them.
fn chain_log(run: &Run) -> Vec<LoggedCall> {
    let mut out = vec![];
    for b in run.chain.blocks() {
        for r in &b.txs {
            if let (TxOutcome::Accepted(_), Ok(call)) = (&r.outcome, ManagerCall::from_tx(&r.tx)) {
                out.push(LoggedCall { height: b.header.number, call, value: r.tx.value });
            }
        }
    }
    out
}

/// Final height of the last non-dummy execution of each request, in trace order.
fn effective_heights(run: &Run) -> BTreeMap<(ContractId, String), Height> {
    let mut out = BTreeMap::new();
    for (_, ev) in run.trace.events() {
        if let Event::Step { cid, h, step, final_height, .. } = ev {
            if step != "dummy" {
                out.insert((*cid, h.clone()), *final_height);
            }
        }
    }
    out
}

fn codes(sc: &Scenario) -> Vec<Vec<u8>> {
    sc.workload
        .iter()
        .filter_map(|a| match a {
            Action::Create { kind, .. } => Some(kind.code()),
            Action::CreateUnknown { .. } => Some(unknown_code()),
            _ => None,
        })
        .collect()
}

/// Checks every live contract: identical state across its pool, no request
/// executed twice or lost, and the state equal to a sequential replay.
pub fn check(sc: &Scenario, run: &Run) -> Result<(), Mismatch> {
    let log = chain_log(run);
    let heights = effective_heights(run);
    let codes = codes(sc);
    for (c, cid) in run.contracts.iter().enumerate() {
        let Some(cid) = *cid else { continue };
        let Some(rec) = run.chain.state().record(cid) else { continue };
        if !rec.is_live() {
            continue;
        }
        let members: Vec<_> = rec
            .pool_members()
            .iter()
            .map(|p| run.enclaves.iter().find(|e| e.party() == *p).expect("pool members are registered"))
            .collect();
        let states: Vec<&ContractState> =
            members.iter().map(|e| e.contract_state(cid).ok_or(Mismatch::NoInstance(cid))).collect::<Result<_, _>>()?;
        if states.iter().any(|s| encode(*s) != encode(states[0])) {
            return Err(Mismatch::Diverged(cid));
        }
        let state = states[0];
        let key = members[0].inspect_contract_key(cid).expect("instance implies key");

        let mut seen = std::collections::BTreeSet::new();
        for h in &state.received {
            if !seen.insert(*h) {
                return Err(Mismatch::Duplicate(cid, h.to_hex()));
            }
        }
        for q in run.requests.iter().filter(|q| q.cid == cid && matches!(q.outcome, Some(Outcome::Done(_)))) {
            if !state.has_received(&q.h) {
                return Err(Mismatch::Lost(cid, q.h.to_hex()));
            }
        }

        let mut replay = ContractRegistry::standard()
            .with_budget(members[0].params().step_budget)
            .init_contract(cid, &codes[c], rec.created_at)
            .expect("live contracts have known code");
        let mut last: Option<Digest> = None;
        for h in &state.received {
            let q = run.requests.iter().find(|q| q.cid == cid && q.h == *h).ok_or_else(|| Mismatch::Unknown(cid, h.to_hex()))?;
            let height = heights.get(&(cid, h.to_hex())).copied().unwrap_or(0);
            let view = ChainView { calls: &log, final_height: height };
            let step = replay.next_state(q.user, &view, &q.mv, *h, move_seed(key, h));
            debug_assert_ne!(step, StepKind::Dummy);
            last = Some(*h);
        }
        if let Some(h) = last {
            // later dummy executions still consumed chain data
            let view = ChainView { calls: &log, final_height: state.processed_height };
            replay.next_state(run.requests[0].user, &view, &[], h, Digest::ZERO);
        }
        if encode(replay.state()) != encode(state) {
            return Err(Mismatch::Replay(cid));
        }
    }
    Ok(())
}
