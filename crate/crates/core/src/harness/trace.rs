//! JSON-lines traces. Every line carries the hash of its predecessor, so a
//! replayed trace is checked for tampering before any monitor looks at it.

use serde::{Deserialize, Serialize};

use crate::chain::{Coins, Height, RelevantTx, Seconds};
use crate::crypto::{hash_parts, Digest, PartyId, PartyKind};
use crate::messages::ContractId;

use super::scenario::MsgKind;

/// Full-width party identifier as used in traces: hex of the 33-byte wire form.
pub fn pid(p: &PartyId) -> String {
    hex::encode(p.to_bytes())
}

pub fn party_from_hex(s: &str) -> Option<PartyId> {
    let bytes = hex::decode(s).ok()?;
    if bytes.len() != 33 {
        return None;
    }
    let kind = match bytes[0] {
        0 => PartyKind::User,
        1 => PartyKind::Operator,
        2 => PartyKind::Enclave,
        3 => PartyKind::Manager,
        4 => PartyKind::Platform,
        _ => return None,
    };
    Some(PartyId { kind, id: bytes[1..].try_into().ok()? })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    None,
    Deposit { coins: Coins },
    Payout { level: u64, total: Coins },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxEvent {
    pub sender: String,
    pub kind: String,
    pub cid: Option<ContractId>,
    pub value: Coins,
    pub data: String,
    pub accepted: bool,
    pub effect: Effect,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl TxEvent {
    pub fn relevant_tx(&self) -> Option<RelevantTx> {
        Some(RelevantTx { data: hex::decode(&self.data).ok()?, sender: party_from_hex(&self.sender)?, value: self.value })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Via {
    Offchain,
    Onchain,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Meta {
        schema_version: u32,
        scenario: String,
        seed: u64,
        n: usize,
        byzantine: usize,
        pool_size: usize,
        gamma: u64,
        mirror_depth: u64,
        enclaves: Vec<String>,
    },
    /// Setup finished: every enclave is registered and synchronized.
    Ready,
    /// Operator `operator` follows an adversary policy from here on.
    Corrupt { operator: usize, enclave: String },
    Block {
        number: Height,
        timestamp: Seconds,
        hash: String,
        incr_tx_hash: String,
        txs: Vec<TxEvent>,
    },
    Pool { cid: ContractId, pool: Vec<String> },
    Send {
        from: String,
        to: String,
        kind: MsgKind,
        cid: ContractId,
        h: Option<String>,
        bytes: String,
        /// `None` when the message was dropped.
        deliver_at: Option<Seconds>,
    },
    Invoke {
        enclave: String,
        input: String,
        cid: Option<ContractId>,
        outcome: String,
        mirror_height: Height,
        /// Hash of the header the replica was built up to.
        mirror_hash: String,
        chain_tip: Height,
    },
    /// A watchdog enclave produced CONFIRM(h).
    Confirmed { cid: ContractId, h: String, by: String },
    /// An executor enclave released the result for `h`.
    Emitted { cid: ContractId, h: String, by: String },
    Step { cid: ContractId, h: String, by: String, step: String, final_height: Height },
    Request { id: usize, user: usize, cid: ContractId, h: String, bound: Seconds },
    /// Plaintext that no party but the enclaves and its owner may ever see.
    Secret { owner: String, bytes: String },
    Done { id: usize, via: Via },
    Failed { id: usize, reason: String },
    Created { contract: usize, cid: ContractId },
    CreationFailed { contract: usize, cid: ContractId },
    Timer { what: String },
    End { complete: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub seq: u64,
    pub t: Seconds,
    pub prev: String,
    pub hash: String,
    pub event: Event,
}

fn line_hash(prev: &Digest, seq: u64, t: Seconds, event: &Event) -> Digest {
    let body = serde_json::to_vec(event).expect("events serialize");
    hash_parts(&[&prev.0, &seq.to_be_bytes(), &t.to_be_bytes(), &body])
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("line {0}: {1}")]
    Malformed(usize, String),
    #[error("line {0}: hash chain broken")]
    Tampered(usize),
    #[error("trace ends without an end record")]
    Truncated,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    lines: Vec<Line>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, t: Seconds, event: Event) {
        let prev = self.lines.last().map_or(Digest::ZERO, |l| Digest::from_hex(&l.hash).expect("own hashes are hex"));
        let seq = self.lines.len() as u64;
        let hash = line_hash(&prev, seq, t, &event);
        self.lines.push(Line { seq, t, prev: prev.to_hex(), hash: hash.to_hex(), event });
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn events(&self) -> impl Iterator<Item = (Seconds, &Event)> {
        self.lines.iter().map(|l| (l.t, &l.event))
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(&serde_json::to_string(l).expect("lines serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses and checks the hash chain and the closing record.
    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let mut lines = Vec::new();
        let mut prev = Digest::ZERO;
        for (i, raw) in text.lines().enumerate() {
            let l: Line = serde_json::from_str(raw).map_err(|e| TraceError::Malformed(i + 1, e.to_string()))?;
            let stated = Digest::from_hex(&l.hash).ok_or_else(|| TraceError::Malformed(i + 1, "hash is not hex".into()))?;
            if l.seq != i as u64 || l.prev != prev.to_hex() || line_hash(&prev, l.seq, l.t, &l.event) != stated {
                return Err(TraceError::Tampered(i + 1));
            }
            prev = stated;
            lines.push(l);
        }
        if !matches!(lines.last(), Some(Line { event: Event::End { .. }, .. })) {
            return Err(TraceError::Truncated);
        }
        Ok(Trace { lines })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        let mut t = Trace::new();
        t.push(0, Event::Ready);
        t.push(5, Event::Timer { what: "x".into() });
        t.push(9, Event::End { complete: true });
        t
    }

    #[test]
    fn roundtrip() {
        let t = sample();
        assert_eq!(Trace::from_jsonl(&t.to_jsonl()).unwrap(), t);
    }

    #[test]
    fn edits_break_the_chain() {
        let text = sample().to_jsonl().replace("\"x\"", "\"y\"");
        assert_eq!(Trace::from_jsonl(&text).unwrap_err(), TraceError::Tampered(2));
        let text = sample().to_jsonl().replace("\"t\":5", "\"t\":6");
        assert_eq!(Trace::from_jsonl(&text).unwrap_err(), TraceError::Tampered(2));
    }

    #[test]
    fn truncation_is_detected() {
        let text = sample().to_jsonl();
        let cut: Vec<&str> = text.lines().take(2).collect();
        assert_eq!(Trace::from_jsonl(&cut.join("\n")).unwrap_err(), TraceError::Truncated);
        assert!(matches!(Trace::from_jsonl(&text[..text.len() - 10]), Err(TraceError::Malformed(3, _))));
    }

    #[test]
    fn party_hex_roundtrip() {
        let p = PartyId { kind: PartyKind::Enclave, id: [7; 32] };
        assert_eq!(party_from_hex(&pid(&p)), Some(p));
        assert_eq!(party_from_hex("00"), None);
    }
}
