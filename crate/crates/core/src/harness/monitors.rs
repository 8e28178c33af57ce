//! Safety and liveness checks that need nothing but the trace, so they run
//! just as well on a trace file from disk.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::chain::{incr_hash_update, Coins, Height, Seconds};
use crate::crypto::Digest;
use crate::messages::ContractId;

use super::trace::{Effect, Event, Trace};

/// Secrets shorter than this are not scanned for; they would match by accident.
pub const MIN_SECRET_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub monitor: &'static str,
    pub seq: u64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub violations: Vec<Violation>,
    pub complete: bool,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn of(&self, monitor: &str) -> Vec<&Violation> {
        self.violations.iter().filter(|v| v.monitor == monitor).collect()
    }
}

struct Checker {
    out: Vec<Violation>,
    seq: u64,
}

impl Checker {
    fn fail(&mut self, monitor: &'static str, detail: String) {
        self.out.push(Violation { monitor, seq: self.seq, detail });
    }
}

/// Runs every monitor over `trace`.
pub fn check(trace: &Trace) -> Report {
    let mut c = Checker { out: vec![], seq: 0 };
    let mut gamma = 0;
    let mut pools: BTreeMap<ContractId, Vec<String>> = BTreeMap::new();
    let mut confirmed: BTreeMap<(ContractId, String), BTreeSet<String>> = BTreeMap::new();
    let mut secrets: Vec<(String, Vec<u8>)> = vec![];
    let mut exposed: Vec<(u64, Vec<u8>)> = vec![];
    let mut blocks: BTreeMap<Height, String> = BTreeMap::new();
    let mut invokes: Vec<(u64, Height, String, Height)> = vec![];
    let mut incr = Digest::ZERO;
    let mut deposits: BTreeMap<ContractId, Coins> = BTreeMap::new();
    let mut paid: BTreeMap<ContractId, Coins> = BTreeMap::new();
    let mut levels: BTreeMap<ContractId, u64> = BTreeMap::new();
    let mut requests: BTreeMap<usize, (Seconds, Seconds)> = BTreeMap::new();
    let mut complete = false;
    let mut last_t = 0;

    for line in trace.lines() {
        c.seq = line.seq;
        last_t = line.t;
        match &line.event {
            Event::Meta { gamma: g, .. } => gamma = *g,
            Event::Pool { cid, pool } => {
                pools.insert(*cid, pool.clone());
            }
            Event::Confirmed { cid, h, by } => {
                confirmed.entry((*cid, h.clone())).or_default().insert(by.clone());
            }
            Event::Emitted { cid, h, by } => {
                let have = confirmed.get(&(*cid, h.clone())).cloned().unwrap_or_default();
                let pool = pools.get(cid).cloned().unwrap_or_default();
                let missing: Vec<&String> = pool.iter().filter(|p| *p != by && !have.contains(*p)).collect();
                if !pool.contains(by) {
                    c.fail("replication", format!("{by} released {h} for contract {cid} outside the pool"));
                } else if !missing.is_empty() {
                    c.fail("replication", format!("result {h} released before {} pool members confirmed", missing.len()));
                }
            }
            Event::Secret { bytes, owner } => {
                if let Ok(b) = hex::decode(bytes) {
                    if b.len() >= MIN_SECRET_LEN {
                        secrets.push((owner.clone(), b));
                    }
                }
            }
            Event::Send { bytes, .. } => {
                if let Ok(b) = hex::decode(bytes) {
                    exposed.push((line.seq, b));
                }
            }
            Event::Block { number, hash, incr_tx_hash, txs, .. } => {
                blocks.insert(*number, hash.clone());
                for tx in txs {
                    if let Ok(b) = hex::decode(&tx.data) {
                        exposed.push((line.seq, b));
                    }
                    if !tx.accepted {
                        continue;
                    }
                    match tx.relevant_tx() {
                        Some(r) => incr = incr_hash_update(&incr, &r),
                        None => c.fail("incr_hash", format!("block {number}: unreadable transaction")),
                    }
                    let Some(cid) = tx.cid else { continue };
                    match &tx.effect {
                        Effect::Deposit { coins } => *deposits.entry(cid).or_default() += coins,
                        Effect::Payout { level, total } => {
                            let expect = levels.entry(cid).or_default();
                            if *level != *expect {
                                c.fail("coin_flow", format!("contract {cid}: payout at level {level}, expected {expect}"));
                            }
                            *expect = level + 1;
                            let p = paid.entry(cid).or_default();
                            *p += total;
                            let d = deposits.get(&cid).copied().unwrap_or(0);
                            if *p > d {
                                c.fail("coin_flow", format!("contract {cid}: paid {p} of {d} deposited"));
                            }
                        }
                        Effect::None => {}
                    }
                }
                if incr.to_hex() != *incr_tx_hash {
                    c.fail("incr_hash", format!("block {number}: incremental hash does not refold"));
                    incr = Digest::from_hex(incr_tx_hash).unwrap_or(incr);
                }
            }
            Event::Invoke { outcome, mirror_height, mirror_hash, chain_tip, .. } if outcome == "ok" => {
                invokes.push((line.seq, *mirror_height, mirror_hash.clone(), *chain_tip));
            }
            Event::Request { id, bound, .. } => {
                requests.insert(*id, (line.t, *bound));
            }
            Event::Done { id, .. } | Event::Failed { id, .. } => {
                if let Some((t0, bound)) = requests.remove(id) {
                    if line.t - t0 > bound {
                        c.fail("liveness", format!("request {id} took {}s, bound {bound}s", line.t - t0));
                    }
                }
            }
            Event::End { complete: done } => complete = *done,
            _ => {}
        }
    }

    for (seq, height, hash, tip) in invokes {
        c.seq = seq;
        match blocks.get(&height) {
            Some(h) if *h == hash => {}
            _ => c.fail("sync", format!("enclave acted on block {height} that is not on the main chain")),
        }
        if height + gamma > tip {
            c.fail("sync", format!("enclave acted on block {height}, not final at tip {tip}"));
        }
    }

    for (seq, bytes) in &exposed {
        c.seq = *seq;
        for (owner, s) in &secrets {
            if bytes.windows(s.len()).any(|w| w == s.as_slice()) {
                c.fail("privacy", format!("plaintext of {owner} visible on the wire"));
            }
        }
    }

    c.seq = trace.lines().last().map_or(0, |l| l.seq);
    for (id, (t0, bound)) in requests {
        if last_t - t0 > bound {
            c.fail("liveness", format!("request {id} unanswered after {}s, bound {bound}s", last_t - t0));
        }
    }
    if !complete {
        c.fail("completion", "workload unfinished at the horizon".into());
    }
    Report { violations: c.out, complete }
}
