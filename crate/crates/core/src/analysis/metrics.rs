use std::collections::BTreeMap;

use serde::Serialize;

use crate::chain::Seconds;
use crate::harness::trace::{Event, Trace};
use crate::messages::ContractId;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ContractMetrics {
    /// Accepted creation transactions.
    pub onchain: u64,
    pub deposits: u64,
    pub payouts: u64,
    /// Accepted challenge, response and finalize transactions.
    pub challenge_txs: u64,
    pub executor_challenges: u64,
    pub watchdog_challenges: u64,
    pub creator_challenges: u64,
    pub creation_pool_challenges: u64,
    /// Seconds from each challenge block to the block settling it.
    pub challenge_latencies: Vec<Seconds>,
    pub crashed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RequestMetrics {
    pub id: usize,
    pub cid: ContractId,
    pub latency: Option<Seconds>,
    pub done: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Metrics {
    pub registrations: u64,
    /// Creation transactions over all contracts.
    pub onchain: u64,
    pub deposits: u64,
    pub payouts: u64,
    pub challenge_txs: u64,
    pub rejected_txs: u64,
    pub contracts: BTreeMap<ContractId, ContractMetrics>,
    pub requests: Vec<RequestMetrics>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("line {0}: result for unknown request {1}")]
    UnknownRequest(u64, usize),
    #[error("line {0}: block {1} does not extend block {2}")]
    BlockOrder(u64, u64, u64),
    #[error("line {0}: transaction kind {1} without a contract")]
    NoContract(u64, String),
}

/// The transaction that settles a challenge of the given kind.
fn settles(open: &str, kind: &str) -> bool {
    matches!(
        (open, kind),
        ("challenge_executor", "executor_response" | "finalize_executor")
            | ("challenge_watchdogs", "finalize_watchdogs")
            | ("challenge_creator", "finalize_creation" | "creation_failed" | "finalize_executor")
            | ("challenge_creation_pool", "finalize_watchdogs")
    )
}

pub fn measure(trace: &Trace) -> Result<Metrics, MetricsError> {
    let mut out = Metrics::default();
    let mut open: BTreeMap<ContractId, Vec<(&'static str, Seconds)>> = BTreeMap::new();
    let mut last_block: Option<u64> = None;
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut started: BTreeMap<usize, Seconds> = BTreeMap::new();

    for line in trace.lines() {
        match &line.event {
            Event::Block { number, timestamp, txs, .. } => {
                if let Some(prev) = last_block {
                    if *number != prev + 1 {
                        return Err(MetricsError::BlockOrder(line.seq, *number, prev));
                    }
                }
                last_block = Some(*number);
                for tx in txs {
                    if !tx.accepted {
                        out.rejected_txs += 1;
                        continue;
                    }
                    if tx.kind == "register" {
                        out.registrations += 1;
                        continue;
                    }
                    let cid = tx.cid.ok_or_else(|| MetricsError::NoContract(line.seq, tx.kind.clone()))?;
                    let c = out.contracts.entry(cid).or_default();
                    let pending = open.entry(cid).or_default();
                    if let Some(i) = pending.iter().position(|(k, _)| settles(k, &tx.kind)) {
                        let (_, t0) = pending.remove(i);
                        c.challenge_latencies.push(timestamp - t0);
                    }
                    match tx.kind.as_str() {
                        "init_creation" | "finalize_creation" | "creation_failed" => {
                            c.onchain += 1;
                            out.onchain += 1;
                        }
                        "deposit" => {
                            c.deposits += 1;
                            out.deposits += 1;
                        }
                        "payout" => {
                            c.payouts += 1;
                            out.payouts += 1;
                        }
                        kind => {
                            let opened = match kind {
                                "challenge_executor" => Some(("challenge_executor", &mut c.executor_challenges)),
                                "challenge_watchdogs" => Some(("challenge_watchdogs", &mut c.watchdog_challenges)),
                                "challenge_creator" => Some(("challenge_creator", &mut c.creator_challenges)),
                                "challenge_creation_pool" => {
                                    Some(("challenge_creation_pool", &mut c.creation_pool_challenges))
                                }
                                _ => None,
                            };
                            if let Some((name, count)) = opened {
                                *count += 1;
                                pending.push((name, *timestamp));
                            }
                            c.challenge_txs += 1;
                            out.challenge_txs += 1;
                        }
                    }
                }
            }
            Event::Pool { cid, pool } => {
                out.contracts.entry(*cid).or_default().crashed = pool.is_empty();
            }
            Event::Request { id, cid, .. } => {
                index.insert(*id, out.requests.len());
                started.insert(*id, line.t);
                out.requests.push(RequestMetrics { id: *id, cid: *cid, latency: None, done: false });
            }
            Event::Done { id, .. } | Event::Failed { id, .. } => {
                let i = *index.get(id).ok_or(MetricsError::UnknownRequest(line.seq, *id))?;
                let r = &mut out.requests[i];
                r.latency = Some(line.t - started[id]);
                r.done = matches!(line.event, Event::Done { .. });
            }
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::trace::{Effect, TxEvent, Via};

    fn tx(kind: &str) -> TxEvent {
        TxEvent {
            sender: String::new(),
            kind: kind.into(),
            cid: Some(4),
            value: 0,
            data: String::new(),
            accepted: true,
            effect: Effect::None,
            error: None,
        }
    }

    fn block(t: &mut Trace, number: u64, txs: Vec<TxEvent>) {
        t.push(number * 15, Event::Block { number, timestamp: number * 15, hash: String::new(), incr_tx_hash: String::new(), txs });
    }

    #[test]
    fn empty_trace_is_zero() {
        assert_eq!(measure(&Trace::new()).unwrap(), Metrics::default());
    }

    #[test]
    fn challenge_round_counts_two() {
        let mut t = Trace::new();
        block(&mut t, 1, vec![tx("init_creation")]);
        block(&mut t, 2, vec![tx("finalize_creation")]);
        block(&mut t, 3, vec![tx("challenge_executor")]);
        t.push(50, Event::Request { id: 0, user: 0, cid: 4, h: "x".into(), bound: 100 });
        block(&mut t, 4, vec![]);
        block(&mut t, 5, vec![tx("finalize_executor")]);
        t.push(80, Event::Done { id: 0, via: Via::Onchain });
        let mut rejected = tx("payout");
        rejected.accepted = false;
        block(&mut t, 6, vec![rejected]);
        t.push(95, Event::Pool { cid: 4, pool: vec![] });

        let m = measure(&t).unwrap();
        assert_eq!((m.onchain, m.challenge_txs, m.rejected_txs, m.payouts), (2, 2, 1, 0));
        let c = &m.contracts[&4];
        assert_eq!(c.executor_challenges, 1);
        assert_eq!(c.challenge_latencies, vec![30]);
        assert!(c.crashed);
        assert_eq!(m.requests, vec![RequestMetrics { id: 0, cid: 4, latency: Some(30), done: true }]);
    }

    #[test]
    fn malformed_traces_are_rejected() {
        let mut t = Trace::new();
        t.push(0, Event::Done { id: 3, via: Via::Offchain });
        assert_eq!(measure(&t), Err(MetricsError::UnknownRequest(0, 3)));

        let mut t = Trace::new();
        block(&mut t, 1, vec![]);
        block(&mut t, 3, vec![]);
        assert_eq!(measure(&t), Err(MetricsError::BlockOrder(1, 3, 1)));
    }
}
