//! Light-client synchronization: header chains, the block-rate rule, and a
//! manager replica rebuilt from operator-supplied relevant transactions that
//! are checked against the incremental hash.

use serde::{Deserialize, Serialize};

use crate::chain::{
    fold_incr_hash, headers_linked, state_root, tx_root, verify_state_proof, BlockContext, BlockHashes, BlockHeader,
    Chain, ChainParams, Height, OnChainState, RelevantTx, Seconds, StateProof,
};
use crate::contracts::LoggedCall;
use crate::crypto::Digest;
use crate::manager::Manager;
use crate::messages::ManagerCall;

/// Relevant transactions grouped by block.
pub type CallLog = Vec<(Height, Vec<RelevantTx>)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncParams {
    pub chain: ChainParams,
    /// Confirmations before a block's transactions reach the manager replica.
    /// A feed that breaks the rate rule is caught within two windows, so a
    /// slow fork stays out of the replica only if this is at least `2 * L`.
    pub mirror_depth: u64,
    /// `L`: blocks the operator must deliver within every `rate_window`.
    pub rate_blocks: u64,
    /// `tau_p`, in local seconds.
    pub rate_window: Seconds,
    /// `tau_variance`: how far the newest header may trail the enclave clock.
    pub max_header_lag: Seconds,
}

impl Default for SyncParams {
    fn default() -> Self {
        let chain = ChainParams::default();
        SyncParams { chain, mirror_depth: chain.gamma.max(100), rate_blocks: 50, rate_window: 33 * 50, max_header_lag: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum SyncError {
    #[error("headers do not link")]
    BrokenChain,
    #[error("relevant transactions incomplete or misplaced")]
    IncompleteTxData,
    #[error("fork rewrites a final block")]
    ForkTooDeep,
    #[error("newest header trails the enclave clock")]
    StaleHeaders,
    #[error("fewer than L blocks within the rate window")]
    RateViolation,
    #[error("view is recovering from a rate violation")]
    Recovering,
    #[error("enclave has not been initialized")]
    NotInitialized,
    #[error("replica rejected an accepted transaction: {0}")]
    MirrorDivergence(String),
}

/// Chain data an operator hands to its enclave on each invocation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncBatch {
    /// New headers; the first may replace non-final ones the enclave already holds.
    pub headers: Vec<BlockHeader>,
    /// Accepted relevant transactions of the blocks that newly reach mirror depth.
    pub calls: Vec<(Height, Vec<RelevantTx>)>,
    /// Incremental-hash proof at the new mirror height.
    pub proof: Option<StateProof>,
}

struct Headers<'a> {
    base: Height,
    headers: &'a [BlockHeader],
}

impl BlockHashes for Headers<'_> {
    fn block_hash(&self, number: Height) -> Option<Digest> {
        let i = number.checked_sub(self.base)?;
        self.headers.get(i as usize).map(|h| h.digest())
    }
}

fn replay_block(
    mirror: &mut Manager,
    log: &mut Vec<LoggedCall>,
    history: &dyn BlockHashes,
    number: Height,
    timestamp: Seconds,
    txs: &[RelevantTx],
) -> Result<(), SyncError> {
    let ctx = BlockContext { number, timestamp, history };
    for tx in txs {
        let call = ManagerCall::from_tx(tx).map_err(|_| SyncError::MirrorDivergence("unparsable call".into()))?;
        mirror.apply(tx, &ctx).map_err(|e| SyncError::MirrorDivergence(e.to_string()))?;
        log.push(LoggedCall { height: number, call, value: tx.value });
    }
    Ok(())
}

/// Heights must increase strictly and stay inside `lo..=hi`.
fn well_placed(calls: &[(Height, Vec<RelevantTx>)], lo: Height, hi: Height) -> bool {
    calls.iter().all(|(h, _)| *h >= lo && *h <= hi) && calls.windows(2).all(|w| w[0].0 < w[1].0)
}

/// Re-folds `calls` onto `start` and compares against the proven on-chain value.
pub fn verify_incr(start: Digest, calls: &[(Height, Vec<RelevantTx>)], proof: &StateProof, header: &BlockHeader) -> bool {
    let folded = fold_incr_hash(start, calls.iter().flat_map(|(_, txs)| txs));
    verify_state_proof(proof, header) && proof.leaf == folded
}

#[derive(Clone, Debug)]
pub struct SyncedView {
    headers: Vec<BlockHeader>,
    clock: Seconds,
    clock_set_at: Seconds,
    incr_tx_hash: Digest,
    mirror_height: Height,
    window_start: Seconds,
    window_base: Height,
    recovering: bool,
    mirror: Manager,
    log: Vec<LoggedCall>,
}

impl SyncedView {
    /// Bootstraps from `gamma + 1` headers whose first one is the checkpoint,
    /// plus every relevant transaction up to the checkpoint.
    pub fn init(
        params: &SyncParams,
        now: Seconds,
        headers: Vec<BlockHeader>,
        calls: &[(Height, Vec<RelevantTx>)],
        proof: &StateProof,
        mut mirror: Manager,
    ) -> Result<SyncedView, SyncError> {
        if headers.len() as u64 != params.chain.gamma + 1 || !headers_linked(&headers) {
            return Err(SyncError::BrokenChain);
        }
        let cp = &headers[0];
        if !well_placed(calls, 1, cp.number) || !verify_incr(Digest::ZERO, calls, proof, cp) {
            return Err(SyncError::IncompleteTxData);
        }
        let mut log = Vec::new();
        let unknown = Headers { base: cp.number, headers: &[] };
        for (h, txs) in calls {
            replay_block(&mut mirror, &mut log, &unknown, *h, 0, txs)?;
        }
        if state_root(&proof.leaf, &mirror.commitment()) != cp.state_root {
            return Err(SyncError::IncompleteTxData);
        }
        let tip = headers.last().expect("gamma + 1 headers");
        Ok(SyncedView {
            clock: tip.timestamp,
            clock_set_at: now,
            incr_tx_hash: proof.leaf,
            mirror_height: cp.number,
            window_start: now,
            window_base: tip.number,
            recovering: false,
            headers,
            mirror,
            log,
        })
    }

    /// Oldest retained header; it moves up with the mirror.
    pub fn checkpoint(&self) -> &BlockHeader {
        &self.headers[0]
    }

    pub fn tip(&self) -> &BlockHeader {
        self.headers.last().expect("never empty")
    }

    pub fn header(&self, number: Height) -> Option<&BlockHeader> {
        let i = number.checked_sub(self.checkpoint().number)?;
        self.headers.get(i as usize)
    }

    pub fn clock(&self) -> Seconds {
        self.clock
    }

    pub fn mirror_height(&self) -> Height {
        self.mirror_height
    }

    pub fn incr_tx_hash(&self) -> Digest {
        self.incr_tx_hash
    }

    pub fn mirror(&self) -> &Manager {
        &self.mirror
    }

    pub fn log(&self) -> &[LoggedCall] {
        &self.log
    }

    /// False after a rate violation until a full window of fresh blocks arrives.
    pub fn usable(&self) -> bool {
        !self.recovering
    }

    fn final_height(&self, params: &SyncParams) -> Height {
        self.tip().number.saturating_sub(params.chain.gamma)
    }

    /// Applies a batch atomically: on error nothing but the rate bookkeeping changes.
    pub fn ingest(&mut self, params: &SyncParams, now: Seconds, batch: &SyncBatch) -> Result<(), SyncError> {
        let base = self.checkpoint().number;
        let mut headers = self.headers.clone();
        if let Some(first) = batch.headers.first() {
            if first.number == 0 || first.number > self.tip().number + 1 {
                return Err(SyncError::BrokenChain);
            }
            if first.number <= self.final_height(params).max(base) {
                return Err(SyncError::ForkTooDeep);
            }
            let keep = (first.number - base) as usize;
            if headers[keep - 1].digest() != first.parent || !headers_linked(&batch.headers) {
                return Err(SyncError::BrokenChain);
            }
            let new_tip = batch.headers.last().expect("non-empty").number;
            if new_tip < self.tip().number {
                return Err(SyncError::BrokenChain);
            }
            headers.truncate(keep);
            headers.extend(batch.headers.iter().cloned());
        }
        let tip = headers.last().expect("never empty").clone();

        let clock_now = self.clock + now.saturating_sub(self.clock_set_at);
        if tip.timestamp + params.max_header_lag < clock_now {
            return Err(SyncError::StaleHeaders);
        }

        let elapsed = now.saturating_sub(self.window_start);
        let progress = tip.number.saturating_sub(self.window_base);
        let window_done = progress >= params.rate_blocks && elapsed <= params.rate_window;
        if !window_done && elapsed > params.rate_window {
            self.recovering = true;
            self.window_start = now;
            // blocks the feed already holds do not count towards the next window
            self.window_base = self.window_base.max(tip.number);
            return Err(SyncError::RateViolation);
        }
        if self.recovering && !window_done {
            // a feed that broke the rate rule is trusted again only after a full window
            return Err(SyncError::Recovering);
        }

        let target = self.mirror_height.max(tip.number.saturating_sub(params.mirror_depth));
        let mut mirror = None;
        if target > self.mirror_height {
            let header = &headers[(target - base) as usize];
            let proof = batch.proof.as_ref().ok_or(SyncError::IncompleteTxData)?;
            if !well_placed(&batch.calls, self.mirror_height + 1, target)
                || !verify_incr(self.incr_tx_hash, &batch.calls, proof, header)
            {
                return Err(SyncError::IncompleteTxData);
            }
            let mut by_height = batch.calls.iter().peekable();
            for number in self.mirror_height + 1..=target {
                let txs = match by_height.peek() {
                    Some((h, txs)) if *h == number => {
                        by_height.next();
                        txs.as_slice()
                    }
                    _ => &[],
                };
                if tx_root(txs) != headers[(number - base) as usize].tx_root {
                    return Err(SyncError::IncompleteTxData);
                }
            }
            let mut m = self.mirror.clone();
            let mut log = Vec::new();
            let history = Headers { base, headers: &headers };
            for (h, txs) in &batch.calls {
                let ts = headers[(*h - base) as usize].timestamp;
                replay_block(&mut m, &mut log, &history, *h, ts, txs)?;
            }
            if state_root(&proof.leaf, &m.commitment()) != header.state_root {
                return Err(SyncError::MirrorDivergence("state root mismatch".into()));
            }
            mirror = Some((m, log, proof.leaf));
        } else if !batch.calls.is_empty() {
            return Err(SyncError::IncompleteTxData);
        }

        // commit
        if window_done {
            self.window_start = now;
            self.window_base = tip.number;
            self.recovering = false;
        }
        self.clock = clock_now.max(tip.timestamp);
        self.clock_set_at = now;
        self.headers = headers;
        if let Some((m, log, leaf)) = mirror {
            self.mirror = m;
            self.log.extend(log);
            self.incr_tx_hash = leaf;
            self.mirror_height = target;
            // nothing below the mirror is consulted again; the replica trusts
            // evidence hashes it can no longer look up
            self.headers.drain(..(target - base) as usize);
        }
        Ok(())
    }
}

/// Material an honest operator hands a fresh enclave: `gamma + 1` headers
/// ending at the tip, all relevant transactions up to the checkpoint, and the
/// checkpoint's incremental-hash proof.
pub fn bootstrap(chain: &Chain<Manager>) -> (Vec<BlockHeader>, CallLog, StateProof) {
    let gamma = chain.params().gamma;
    assert!(chain.tip() > gamma, "chain too short to bootstrap from");
    let cp = chain.tip() - gamma;
    let headers = chain.header_range(cp, chain.tip() + 1).expect("in range");
    let calls = chain.relevant_txs(1, cp);
    let proof = chain.prove_incr_hash(cp).expect("checkpoint is final");
    (headers, calls, proof)
}

/// Everything `view` is missing from `chain`, replacing any headers that left
/// the chain (e.g. after being fed a sidechain).
pub fn honest_batch(chain: &Chain<Manager>, view: &SyncedView, params: &SyncParams) -> SyncBatch {
    let mut common = view.tip().number.min(chain.tip());
    while common > view.checkpoint().number && view.header(common) != chain.header(common) {
        common -= 1;
    }
    let headers = chain.header_range(common + 1, chain.tip() + 1).expect("in range");
    let target = view.mirror_height().max(chain.tip().saturating_sub(params.mirror_depth));
    if target <= view.mirror_height() {
        return SyncBatch { headers, calls: vec![], proof: None };
    }
    SyncBatch {
        headers,
        calls: chain.relevant_txs(view.mirror_height() + 1, target),
        proof: Some(chain.prove_incr_hash(target).expect("mirror depth is at least gamma")),
    }
}
