//! Simulated blockchain: bounded-delay inclusion, finality depth, header chains,
//! the incremental relevant-transaction hash and a two-leaf state commitment.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::codec::encode;
use crate::crypto::{digest_of, hash, hash_parts, Digest, PartyId};

pub type Height = u64;
pub type Seconds = u64;
pub type Coins = u64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevantTx {
    pub data: Vec<u8>,
    pub sender: PartyId,
    pub value: Coins,
}

/// One step of the incremental transaction hash:
/// `H(prev || data || sender || value)` with `value` as 8 big-endian bytes.
pub fn incr_hash_update(prev: &Digest, tx: &RelevantTx) -> Digest {
    hash_parts(&[&prev.0, &tx.data, &tx.sender.to_bytes(), &tx.value.to_be_bytes()])
}

pub fn fold_incr_hash<'a>(start: Digest, txs: impl IntoIterator<Item = &'a RelevantTx>) -> Digest {
    txs.into_iter().fold(start, |acc, tx| incr_hash_update(&acc, tx))
}

pub fn tx_root(txs: &[RelevantTx]) -> Digest {
    digest_of(txs)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub number: Height,
    pub parent: Digest,
    pub timestamp: Seconds,
    pub state_root: Digest,
    /// Commitment to the relevant transactions this block folded into the incremental hash.
    pub tx_root: Digest,
}

impl BlockHeader {
    pub fn digest(&self) -> Digest {
        digest_of(self)
    }
}

fn leaf_node(value: &Digest) -> Digest {
    hash_parts(&[&[0u8], &value.0])
}

fn inner_node(left: &Digest, right: &Digest) -> Digest {
    hash_parts(&[&[1u8], &left.0, &right.0])
}

pub fn state_root(incr_tx_hash: &Digest, rest: &Digest) -> Digest {
    inner_node(&leaf_node(incr_tx_hash), &leaf_node(rest))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateProof {
    pub leaf: Digest,
    /// Siblings from the leaf upward, with the side the sibling sits on.
    pub path: Vec<(Digest, Side)>,
    pub root: Digest,
}

impl StateProof {
    pub fn fold(&self) -> Digest {
        self.path.iter().fold(leaf_node(&self.leaf), |node, (sib, side)| match side {
            Side::Right => inner_node(&node, sib),
            Side::Left => inner_node(sib, &node),
        })
    }
}

pub fn verify_state_proof(proof: &StateProof, header: &BlockHeader) -> bool {
    proof.root == header.state_root && proof.fold() == proof.root
}

/// Read access to the hashes of already-mined blocks, handed to state transitions.
pub trait BlockHashes {
    fn block_hash(&self, number: Height) -> Option<Digest>;
}

pub struct BlockContext<'a> {
    pub number: Height,
    pub timestamp: Seconds,
    pub history: &'a dyn BlockHashes,
}

/// State machine hosted by the chain. Accepted calls fold into the incremental
/// hash; rejected calls are recorded in the block but change nothing.
pub trait OnChainState: Clone {
    type Receipt: Clone + fmt::Debug + Serialize;
    type Rejection: Clone + fmt::Debug + fmt::Display;

    fn apply(&mut self, tx: &RelevantTx, ctx: &BlockContext<'_>) -> Result<Self::Receipt, Self::Rejection>;
    /// Digest of everything except the incremental hash.
    fn commitment(&self) -> Digest;
}

#[derive(Clone, Debug, Serialize)]
pub enum TxOutcome<R> {
    Accepted(R),
    Rejected(String),
}

impl<R> TxOutcome<R> {
    pub fn is_accepted(&self) -> bool {
        matches!(self, TxOutcome::Accepted(_))
    }
}

pub type Ticket = u64;

#[derive(Clone, Debug, Serialize)]
pub struct TxRecord<R> {
    pub ticket: Ticket,
    pub tx: RelevantTx,
    pub outcome: TxOutcome<R>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Block<R> {
    pub header: BlockHeader,
    pub txs: Vec<TxRecord<R>>,
    pub incr_tx_hash: Digest,
    pub rest: Digest,
}

impl<R> Block<R> {
    pub fn accepted_txs(&self) -> Vec<RelevantTx> {
        self.txs.iter().filter(|r| r.outcome.is_accepted()).map(|r| r.tx.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainParams {
    /// Worst-case inclusion delay in blocks.
    pub alpha: u64,
    /// Finality depth in blocks.
    pub gamma: u64,
    /// Mean block interval.
    pub block_time: Seconds,
    /// Maximum deviation of a single interval from `block_time`.
    pub block_time_jitter: Seconds,
}

impl ChainParams {
    pub fn min_interval(&self) -> Seconds {
        self.block_time.saturating_sub(self.block_time_jitter).max(1)
    }

    pub fn max_interval(&self) -> Seconds {
        self.block_time + self.block_time_jitter
    }
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams { alpha: 20, gamma: 15, block_time: 15, block_time_jitter: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("block timestamp must advance")]
    TimestampRegression,
    #[error("requested range {from}..{to} exceeds tip {tip}")]
    OutOfRange { from: Height, to: Height, tip: Height },
    #[error("height {height} is not final (finalized height {finalized})")]
    NotFinal { height: Height, finalized: Height },
    #[error("inclusion delay {delay} outside 1..={alpha}")]
    InclusionDelay { delay: u64, alpha: u64 },
}

#[derive(Clone, Debug)]
struct Pending {
    ticket: Ticket,
    include_at: Height,
    tx: RelevantTx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidechainPolicy {
    /// Last honest block shared with the fork.
    pub fork_at: Height,
    pub blocks: u64,
    pub start_time: Seconds,
    pub interval: Seconds,
}

struct History<'a, R>(&'a [Block<R>]);

impl<R> BlockHashes for History<'_, R> {
    fn block_hash(&self, number: Height) -> Option<Digest> {
        self.0.get(number as usize).map(|b| b.header.digest())
    }
}

#[derive(Clone)]
pub struct Chain<S: OnChainState> {
    params: ChainParams,
    genesis_state: S,
    state: S,
    blocks: Vec<Block<S::Receipt>>,
    pending: Vec<Pending>,
    next_ticket: Ticket,
}

impl<S: OnChainState> Chain<S> {
    pub fn new(params: ChainParams, state: S, genesis_time: Seconds) -> Self {
        let rest = state.commitment();
        let header = BlockHeader {
            number: 0,
            parent: Digest::ZERO,
            timestamp: genesis_time,
            state_root: state_root(&Digest::ZERO, &rest),
            tx_root: tx_root(&[]),
        };
        Chain {
            params,
            genesis_state: state.clone(),
            state,
            blocks: vec![Block { header, txs: vec![], incr_tx_hash: Digest::ZERO, rest }],
            pending: vec![],
            next_ticket: 0,
        }
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn tip(&self) -> Height {
        self.blocks.len() as Height - 1
    }

    pub fn tip_header(&self) -> &BlockHeader {
        &self.blocks.last().expect("genesis always present").header
    }

    pub fn finalized_height(&self) -> Height {
        self.tip().saturating_sub(self.params.gamma)
    }

    pub fn block(&self, number: Height) -> Option<&Block<S::Receipt>> {
        self.blocks.get(number as usize)
    }

    pub fn blocks(&self) -> &[Block<S::Receipt>] {
        &self.blocks
    }

    pub fn header(&self, number: Height) -> Option<&BlockHeader> {
        self.block(number).map(|b| &b.header)
    }

    pub fn incr_tx_hash(&self) -> Digest {
        self.blocks.last().expect("genesis always present").incr_tx_hash
    }

    pub fn incr_hash_at(&self, number: Height) -> Option<Digest> {
        self.block(number).map(|b| b.incr_tx_hash)
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    /// Submits for inclusion in the next block.
    pub fn submit_tx(&mut self, tx: RelevantTx) -> Ticket {
        self.submit_tx_with_delay(tx, 1).expect("delay 1 is always admissible")
    }

    /// Submits for inclusion exactly `delay` blocks after the current tip.
    pub fn submit_tx_with_delay(&mut self, tx: RelevantTx, delay: u64) -> Result<Ticket, ChainError> {
        if delay == 0 || delay > self.params.alpha.max(1) {
            return Err(ChainError::InclusionDelay { delay, alpha: self.params.alpha });
        }
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        self.pending.push(Pending { ticket, include_at: self.tip() + delay, tx });
        Ok(ticket)
    }

    pub fn mine_block(&mut self, delta: i64) -> Result<BlockHeader, ChainError> {
        if delta <= 0 {
            return Err(ChainError::TimestampRegression);
        }
        let timestamp = self.tip_header().timestamp + delta as u64;
        self.mine_block_at(timestamp)
    }

    pub fn mine_block_at(&mut self, timestamp: Seconds) -> Result<BlockHeader, ChainError> {
        if timestamp <= self.tip_header().timestamp {
            return Err(ChainError::TimestampRegression);
        }
        let number = self.tip() + 1;
        let (mut due, rest): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|p| p.include_at <= number);
        self.pending = rest;
        due.sort_by_key(|p| (p.include_at, p.ticket));
        let txs = due.into_iter().map(|p| (p.ticket, p.tx)).collect();
        Ok(self.append(number, timestamp, txs))
    }

    fn append(&mut self, number: Height, timestamp: Seconds, txs: Vec<(Ticket, RelevantTx)>) -> BlockHeader {
        let parent = self.tip_header().digest();
        let mut incr = self.incr_tx_hash();
        let mut records = Vec::with_capacity(txs.len());
        let mut accepted = Vec::new();
        {
            let history = History(&self.blocks);
            let ctx = BlockContext { number, timestamp, history: &history };
            for (ticket, tx) in txs {
                let outcome = match self.state.apply(&tx, &ctx) {
                    Ok(r) => {
                        incr = incr_hash_update(&incr, &tx);
                        accepted.push(tx.clone());
                        TxOutcome::Accepted(r)
                    }
                    Err(e) => TxOutcome::Rejected(e.to_string()),
                };
                records.push(TxRecord { ticket, tx, outcome });
            }
        }
        let rest = self.state.commitment();
        let header = BlockHeader {
            number,
            parent,
            timestamp,
            state_root: state_root(&incr, &rest),
            tx_root: tx_root(&accepted),
        };
        self.blocks.push(Block { header: header.clone(), txs: records, incr_tx_hash: incr, rest });
        header
    }

    /// Headers with numbers in `from..to`.
    pub fn header_range(&self, from: Height, to: Height) -> Result<Vec<BlockHeader>, ChainError> {
        if from > to || to > self.tip() + 1 {
            return Err(ChainError::OutOfRange { from, to, tip: self.tip() });
        }
        Ok(self.blocks[from as usize..to as usize].iter().map(|b| b.header.clone()).collect())
    }

    /// Accepted relevant transactions of blocks `from..=to`, skipping blocks without any.
    pub fn relevant_txs(&self, from: Height, to: Height) -> Vec<(Height, Vec<RelevantTx>)> {
        let to = to.min(self.tip());
        (from..=to)
            .filter_map(|h| {
                let txs = self.blocks[h as usize].accepted_txs();
                (!txs.is_empty()).then_some((h, txs))
            })
            .collect()
    }

    pub fn prove_incr_hash(&self, number: Height) -> Result<StateProof, ChainError> {
        if number > self.finalized_height() {
            return Err(ChainError::NotFinal { height: number, finalized: self.finalized_height() });
        }
        let b = &self.blocks[number as usize];
        Ok(StateProof {
            leaf: b.incr_tx_hash,
            path: vec![(leaf_node(&b.rest), Side::Right)],
            root: b.header.state_root,
        })
    }

    /// Builds an attacker-controlled chain sharing blocks `0..=fork_at` with this
    /// one and then extending it with empty blocks at the attacker's own pace.
    pub fn fork_sidechain(&self, policy: SidechainPolicy) -> Chain<S> {
        let fork_at = policy.fork_at.min(self.tip());
        let mut fork = Chain {
            params: self.params,
            genesis_state: self.genesis_state.clone(),
            state: self.genesis_state.clone(),
            blocks: vec![self.blocks[0].clone()],
            pending: vec![],
            next_ticket: self.next_ticket,
        };
        for number in 1..=fork_at {
            let b = &self.blocks[number as usize];
            let txs = b.txs.iter().map(|r| (r.ticket, r.tx.clone())).collect();
            fork.append(number, b.header.timestamp, txs);
        }
        debug_assert_eq!(fork.tip_header(), self.header(fork_at).unwrap());
        let mut t = policy.start_time.max(fork.tip_header().timestamp);
        for _ in 0..policy.blocks {
            t += policy.interval.max(1);
            fork.mine_block_at(t).expect("attacker timestamps advance");
        }
        fork
    }

    /// One JSON object per block.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for b in &self.blocks {
            let txs: Vec<_> = b
                .txs
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "sender": r.tx.sender.to_string(),
                        "value": r.tx.value,
                        "data": hex::encode(&r.tx.data),
                        "accepted": r.outcome.is_accepted(),
                    })
                })
                .collect();
            let rec = serde_json::json!({
                "number": b.header.number,
                "timestamp": b.header.timestamp,
                "parent": b.header.parent.to_hex(),
                "state_root": b.header.state_root.to_hex(),
                "txs": txs,
            });
            writeln!(out, "{rec}")?;
        }
        Ok(())
    }
}

impl<S: OnChainState> BlockHashes for Chain<S> {
    fn block_hash(&self, number: Height) -> Option<Digest> {
        self.header(number).map(|h| h.digest())
    }
}

/// Checks parent links, consecutive numbering and strictly increasing timestamps.
pub fn headers_linked(headers: &[BlockHeader]) -> bool {
    headers.windows(2).all(|w| {
        w[1].parent == w[0].digest() && w[1].number == w[0].number + 1 && w[1].timestamp > w[0].timestamp
    })
}

/// Convenience state for tests and tools: accepts every call and commits to the count.
#[derive(Clone, Debug, Default)]
pub struct AcceptAll {
    pub count: u64,
}

impl OnChainState for AcceptAll {
    type Receipt = u64;
    type Rejection = String;

    fn apply(&mut self, _tx: &RelevantTx, _ctx: &BlockContext<'_>) -> Result<u64, String> {
        self.count += 1;
        Ok(self.count)
    }

    fn commitment(&self) -> Digest {
        hash(&encode(&self.count))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::PartyKind;

    fn sender(b: u8) -> PartyId {
        PartyId { kind: PartyKind::User, id: [b; 32] }
    }

    fn tx(b: u8, value: Coins) -> RelevantTx {
        RelevantTx { data: vec![b; 3], sender: sender(b), value }
    }

    fn chain(gamma: u64) -> Chain<AcceptAll> {
        Chain::new(ChainParams { gamma, ..ChainParams::default() }, AcceptAll::default(), 0)
    }

    #[test]
    fn fold_matches_hand_concatenation() {
        let t = tx(1, 5);
        let mut bytes = vec![0u8; 32];
        bytes.extend_from_slice(&[1, 1, 1]);
        bytes.push(0);
        bytes.extend_from_slice(&[1; 32]);
        bytes.extend_from_slice(&5u64.to_be_bytes());
        assert_eq!(incr_hash_update(&Digest::ZERO, &t), hash(&bytes));
    }

    #[test]
    fn fold_pinned_vector() {
        assert_eq!(
            incr_hash_update(&Digest::ZERO, &tx(1, 5)).to_hex(),
            "216c5b992cf333e24d2978c0890f3b5b8e5064745e747aa3cb1505a697a19152"
        );
    }

    #[test]
    fn single_omission_always_changes_hash() {
        let txs = [tx(1, 0), tx(2, 3), tx(3, 9)];
        let full = fold_incr_hash(Digest::ZERO, &txs);
        for skip in 0..txs.len() {
            let partial: Vec<_> = txs.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, t)| t).collect();
            assert_ne!(fold_incr_hash(Digest::ZERO, partial), full);
        }
    }

    #[test]
    fn swapping_changes_hash() {
        let (a, b) = (tx(1, 0), tx(2, 0));
        assert_ne!(fold_incr_hash(Digest::ZERO, [&a, &b]), fold_incr_hash(Digest::ZERO, [&b, &a]));
    }

    #[test]
    fn same_block_txs_fold_in_submission_order() {
        let mut c = chain(15);
        c.submit_tx(tx(1, 0));
        c.submit_tx(tx(2, 0));
        c.mine_block(15).unwrap();
        assert_eq!(c.incr_tx_hash(), fold_incr_hash(Digest::ZERO, &[tx(1, 0), tx(2, 0)]));
        assert_eq!(c.header(1).unwrap().tx_root, tx_root(&[tx(1, 0), tx(2, 0)]));
    }

    #[test]
    fn inclusion_within_alpha() {
        let mut c = chain(15);
        let alpha = c.params().alpha;
        assert!(c.submit_tx_with_delay(tx(1, 0), alpha + 1).is_err());
        assert!(c.submit_tx_with_delay(tx(1, 0), 0).is_err());
        c.submit_tx_with_delay(tx(1, 0), alpha).unwrap();
        for _ in 0..alpha - 1 {
            c.mine_block(15).unwrap();
            assert_eq!(c.incr_tx_hash(), Digest::ZERO);
        }
        c.mine_block(15).unwrap();
        assert_eq!(c.tip(), alpha);
        assert_eq!(c.incr_tx_hash(), fold_incr_hash(Digest::ZERO, &[tx(1, 0)]));
        assert_eq!(c.pending_count(), 0);
    }

    #[test]
    fn alpha_one_means_next_block() {
        let mut c = Chain::new(ChainParams { alpha: 1, ..ChainParams::default() }, AcceptAll::default(), 0);
        c.submit_tx(tx(4, 1));
        c.mine_block(1).unwrap();
        assert_eq!(c.block(1).unwrap().txs.len(), 1);
    }

    #[test]
    fn timestamps_must_advance() {
        let mut c = chain(15);
        assert_eq!(c.mine_block(0), Err(ChainError::TimestampRegression));
        assert_eq!(c.mine_block(-3), Err(ChainError::TimestampRegression));
        assert_eq!(c.mine_block(44).unwrap().timestamp, 44);
        assert_eq!(c.mine_block(15).unwrap().timestamp, 59);
    }

    #[test]
    fn finality_arithmetic() {
        let mut c = chain(15);
        for _ in 0..15 {
            c.mine_block(15).unwrap();
        }
        assert_eq!(c.finalized_height(), 0);
        for _ in 0..5 {
            c.mine_block(15).unwrap();
        }
        assert_eq!(c.finalized_height(), 5);
        let c0 = {
            let mut c = chain(0);
            c.mine_block(1).unwrap();
            c
        };
        assert_eq!(c0.finalized_height(), c0.tip());
    }

    #[test]
    fn header_ranges() {
        let mut c = chain(15);
        for _ in 0..4 {
            c.mine_block(15).unwrap();
        }
        assert!(c.header_range(2, 2).unwrap().is_empty());
        assert_eq!(c.header_range(3, 4).unwrap().len(), 1);
        let all = c.header_range(0, 5).unwrap();
        assert_eq!(all.len(), 5);
        assert!(headers_linked(&all));
        assert!(c.header_range(0, 6).is_err());
    }

    #[test]
    fn state_proofs() {
        let mut c = chain(2);
        c.submit_tx(tx(1, 0));
        for _ in 0..4 {
            c.mine_block(15).unwrap();
        }
        assert!(matches!(c.prove_incr_hash(3), Err(ChainError::NotFinal { .. })));
        let p = c.prove_incr_hash(2).unwrap();
        assert!(verify_state_proof(&p, c.header(2).unwrap()));
        assert!(!verify_state_proof(&p, c.header(0).unwrap()));
        let mut bad = p.clone();
        bad.leaf.0[0] ^= 1;
        assert!(!verify_state_proof(&bad, c.header(2).unwrap()));
    }

    #[test]
    fn sidechain_shares_prefix_and_uses_attacker_clock() {
        let mut c = chain(15);
        c.submit_tx(tx(1, 2));
        for _ in 0..10 {
            c.mine_block(15).unwrap();
        }
        let side = c.fork_sidechain(SidechainPolicy { fork_at: 6, blocks: 3, start_time: 500, interval: 100 });
        assert_eq!(side.tip(), 9);
        assert_eq!(side.header(6), c.header(6));
        assert_ne!(side.header(7), c.header(7));
        assert_eq!(side.header(9).unwrap().timestamp, 800);
        let empty = c.fork_sidechain(SidechainPolicy { fork_at: c.tip(), blocks: 0, start_time: 0, interval: 15 });
        assert_eq!(empty.tip_header(), c.tip_header());
    }

    #[test]
    fn jsonl_export_one_line_per_block() {
        let mut c = chain(15);
        c.submit_tx(tx(1, 0));
        c.mine_block(15).unwrap();
        let mut buf = Vec::new();
        c.export_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(v["txs"].as_array().unwrap().len(), 1);
    }
}
