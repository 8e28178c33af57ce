//! The program every registered enclave runs: synchronization, the execution
//! half (EXECUTE / UPDATE / CONFIRM) and the creation half (CREATE / INIT /
//! creation confirms).

pub mod attest;
pub mod sync;


use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{BlockHeader, Height, RelevantTx, Seconds, StateProof};
use crate::codec::{decode, encode};
use crate::contracts::{ChainView, ContractInstance, ContractRegistry, ContractState, StateFlag};
use crate::crypto::{decrypt, digest_of, encrypt, hash, hash_parts, Digest, KeyRing, PartyId, Signed, SigningKey, SymKey};
use crate::manager::{Manager, ManagerConfig, ManagerRecord};
use crate::messages::{
    AttestationQuote, ChainEvidence, Confirm, ContractId, CreateRequest, CreationFailure, CreationStatement,
    ExecuteEnvelope, ExecutionResult, InitAnnouncement, InitConfirm, RequestKeys, ResultBody, StepKind, Update,
    Withdraw,
};

pub use attest::{program_digest, verify_quote, Platform, PROGRAM_ID};
pub use sync::{SyncBatch, SyncError, SyncParams, SyncedView};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnclaveParams {
    pub sync: SyncParams,
    pub manager: ManagerConfig,
    pub pool_size: usize,
    /// Scenario seed feeding pool selection.
    pub pool_seed: u64,
    pub step_budget: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum Bad {
    #[error("sync failed: {0}")]
    Sync(SyncError),
    #[error("view unusable after a rate violation")]
    Unusable,
    #[error("no such contract in the manager replica")]
    NoRecord,
    #[error("contract not ready for execution")]
    NotReady,
    #[error("this enclave is not the executor")]
    NotExecutor,
    #[error("a propagation is still pending")]
    PropagationPending,
    #[error("no propagation is pending")]
    NothingPending,
    #[error("signature does not verify")]
    BadSignature,
    #[error("sender is not the executor")]
    WrongSender,
    #[error("this enclave is not in the pool")]
    NotPoolMember,
    #[error("no contract instance here")]
    NoInstance,
    #[error("contract already initialized")]
    AlreadyInitialized,
    #[error("code does not match the registered hash")]
    CodeMismatch,
    #[error("this enclave is not the creator")]
    NotCreator,
    #[error("decryption failed")]
    WrongKey,
    #[error("message does not decode")]
    Malformed,
    #[error("confirmations missing from {0} pool members")]
    MissingConfirms(usize),
}

/// Execution-side bookkeeping for one contract.
#[derive(Clone, Debug)]
struct Slot {
    instance: ContractInstance,
    key: SymKey,
    /// Digest of the INIT that installed the instance.
    init_digest: Digest,
    /// `O^cid`: pool members whose confirmation is still outstanding.
    open: Vec<PartyId>,
    pending: Option<Pending>,
}

#[derive(Clone, Debug)]
struct Pending {
    h: Digest,
    result_key: SymKey,
    step: StepKind,
}

/// Creator-side bookkeeping while a pool installs a new contract.
#[derive(Clone, Debug)]
struct Creation {
    pool: Vec<PartyId>,
    open: Vec<PartyId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub at: Seconds,
    pub enclave: PartyId,
    pub input: String,
    pub cid: Option<ContractId>,
    pub outcome: Result<String, Bad>,
}

pub struct Enclave {
    key: SigningKey,
    ring: Arc<KeyRing>,
    params: EnclaveParams,
    registry: ContractRegistry,
    view: Option<SyncedView>,
    slots: BTreeMap<ContractId, Slot>,
    creations: BTreeMap<ContractId, Creation>,
    log: Vec<Invocation>,
}

/// Uniform `s`-subset of `tees` in random order, drawn from `seed`.
pub fn sample_pool(tees: &[PartyId], s: usize, seed: Digest) -> Vec<PartyId> {
    let mut rng = ChaCha20Rng::from_seed(seed.0);
    rand::seq::index::sample(&mut rng, tees.len(), s.min(tees.len())).into_iter().map(|i| tees[i]).collect()
}

/// Seed that makes re-executions of one request reproduce the same outcome.
pub fn move_seed(pool_key: &SymKey, h: &Digest) -> Digest {
    hash_parts(&[b"move-seed", &pool_key.to_bytes(), &h.0])
}

fn member_of(pool: &[PartyId], p: &PartyId) -> bool {
    pool.contains(p)
}

impl Enclave {
    /// `TEE.install`: a fresh enclave and the platform's quote over the program digest.
    pub fn install(
        platform: &Platform,
        ring: Arc<KeyRing>,
        key: SigningKey,
        params: EnclaveParams,
    ) -> (Enclave, AttestationQuote) {
        let quote = platform.quote(&ring, key.party(), program_digest());
        let registry = ContractRegistry::standard().with_budget(params.step_budget);
        let enclave = Enclave {
            key,
            ring,
            params,
            registry,
            view: None,
            slots: BTreeMap::new(),
            creations: BTreeMap::new(),
            log: Vec::new(),
        };
        (enclave, quote)
    }

    pub fn party(&self) -> PartyId {
        self.key.party()
    }

    pub fn params(&self) -> &EnclaveParams {
        &self.params
    }

    pub fn view(&self) -> Option<&SyncedView> {
        self.view.as_ref()
    }

    pub fn mirror(&self) -> Option<&Manager> {
        self.view.as_ref().map(|v| v.mirror())
    }

    pub fn instance(&self, cid: ContractId) -> Option<&ContractInstance> {
        self.slots.get(&cid).map(|s| &s.instance)
    }

    pub fn contract_state(&self, cid: ContractId) -> Option<&ContractState> {
        self.instance(cid).map(|i| i.state())
    }

    /// Whether an execution of `cid` awaits confirmations, and for which request.
    pub fn pending(&self, cid: ContractId) -> Option<Digest> {
        self.slots.get(&cid).and_then(|s| s.pending.as_ref().map(|p| p.h))
    }

    /// Kind of transition the pending execution of `cid` performed.
    pub fn pending_step(&self, cid: ContractId) -> Option<StepKind> {
        self.slots.get(&cid).and_then(|s| s.pending.as_ref().map(|p| p.step))
    }

    /// Inspection for the simulation oracle, which has to reproduce the
    /// per-request randomness. No protocol message carries this key in clear.
    pub fn inspect_contract_key(&self, cid: ContractId) -> Option<&SymKey> {
        self.slots.get(&cid).map(|s| &s.key)
    }

    pub fn invocations(&self) -> &[Invocation] {
        &self.log
    }

    pub fn export_invocations<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for inv in &self.log {
            writeln!(out, "{}", serde_json::to_string(inv).expect("invocations serialize"))?;
        }
        Ok(())
    }

    /// Synchronizes from `gamma + 1` headers and returns the signed blockchain evidence.
    pub fn init_sync(
        &mut self,
        now: Seconds,
        headers: Vec<BlockHeader>,
        calls: &[(Height, Vec<RelevantTx>)],
        proof: &StateProof,
    ) -> Result<Signed<ChainEvidence>, SyncError> {
        let replica = Manager::replica(self.params.manager.clone(), self.ring.clone());
        let view = SyncedView::init(&self.params.sync, now, headers, calls, proof, replica)?;
        let cp = view.checkpoint();
        let evidence = ChainEvidence { number: cp.number, block_hash: cp.digest() };
        self.view = Some(view);
        Ok(self.ring.sign(&self.key, evidence).expect("enclave key is registered"))
    }

    /// Ingests chain data without handling a message, e.g. the operator's periodic feed.
    pub fn sync(&mut self, now: Seconds, batch: &SyncBatch) -> Result<(), Bad> {
        let out = self.sync_inner(now, batch);
        self.record(now, "sync", None, out.as_ref().map(|_| "ok".to_string()).map_err(Clone::clone));
        out
    }

    fn sync_inner(&mut self, now: Seconds, batch: &SyncBatch) -> Result<(), Bad> {
        let params = self.params.sync;
        let view = self.view.as_mut().ok_or(Bad::Sync(SyncError::NotInitialized))?;
        match view.ingest(&params, now, batch) {
            Err(SyncError::Recovering) => Err(Bad::Unusable),
            Err(e) => Err(Bad::Sync(e)),
            Ok(()) if !view.usable() => Err(Bad::Unusable),
            Ok(()) => Ok(()),
        }
    }

    fn record(&mut self, at: Seconds, input: &str, cid: Option<ContractId>, outcome: Result<String, Bad>) {
        self.log.push(Invocation { at, enclave: self.party(), input: input.to_string(), cid, outcome });
    }

    fn invoke<T>(
        &mut self,
        now: Seconds,
        batch: &SyncBatch,
        input: &str,
        cid: ContractId,
        f: impl FnOnce(&mut Self) -> Result<T, Bad>,
    ) -> Result<T, Bad> {
        let out = self.sync_inner(now, batch).and_then(|_| f(self));
        let summary = out.as_ref().map(|_| "ok".to_string()).map_err(Clone::clone);
        self.record(now, input, Some(cid), summary);
        out
    }

    fn replica(&self) -> &Manager {
        self.view.as_ref().expect("checked by sync").mirror()
    }

    fn record_of(&self, cid: ContractId) -> Result<&ManagerRecord, Bad> {
        self.replica().record(cid).ok_or(Bad::NoRecord)
    }

    fn final_height(&self) -> Height {
        self.view.as_ref().expect("checked by sync").mirror_height()
    }

    fn sign<M: Serialize>(&self, payload: M) -> Signed<M> {
        self.ring.sign(&self.key, payload).expect("enclave key is registered")
    }

    fn verified<M: Serialize>(&self, m: &Signed<M>) -> Result<(), Bad> {
        if self.ring.verify(m).is_ok() {
            Ok(())
        } else {
            Err(Bad::BadSignature)
        }
    }

    // ---- execution ----

    pub fn handle_execute(&mut self, now: Seconds, batch: &SyncBatch, env: &ExecuteEnvelope) -> Result<Signed<Update>, Bad> {
        self.invoke(now, batch, "execute", env.cid(), |e| e.execute(env))
    }

    fn execute(&mut self, env: &ExecuteEnvelope) -> Result<Signed<Update>, Bad> {
        let cid = env.cid();
        self.verified(&env.request)?;
        let rec = self.record_of(cid)?;
        if rec.creator.is_some() {
            return Err(Bad::NotReady);
        }
        if rec.executor() != Some(self.party()) {
            return Err(Bad::NotExecutor);
        }
        let pool = rec.pool_members().to_vec();
        let slot = self.slots.get(&cid).ok_or(Bad::NoInstance)?;
        if !slot.open.is_empty() {
            return Err(Bad::PropagationPending);
        }
        let keys: RequestKeys =
            decode(&decrypt(&self.key.box_key(), &env.keys).map_err(|_| Bad::WrongKey)?).map_err(|_| Bad::Malformed)?;
        let mv = decrypt(&keys.move_key, &env.request.payload.sealed_move).map_err(|_| Bad::WrongKey)?;
        let h = env.hash();
        let final_height = self.final_height();
        let view = self.view.as_ref().expect("checked by sync");
        let chain = ChainView { calls: view.log(), final_height };
        let slot = self.slots.get_mut(&cid).expect("checked above");
        let seed = move_seed(&slot.key, &h);
        let step = slot.instance.next_state(env.request.signer, &chain, &mv, h, seed);
        slot.open = pool;
        slot.pending = Some(Pending { h, result_key: keys.result_key, step });
        let state = encrypt(&slot.key, &slot.instance.get_state(StateFlag::All));
        Ok(self.sign(Update { cid, state, h }))
    }

    pub fn handle_update(&mut self, now: Seconds, batch: &SyncBatch, m: &Signed<Update>) -> Result<Signed<Confirm>, Bad> {
        self.invoke(now, batch, "update", m.payload.cid, |e| e.update(m))
    }

    fn update(&mut self, m: &Signed<Update>) -> Result<Signed<Confirm>, Bad> {
        let cid = m.payload.cid;
        self.verified(m)?;
        let rec = self.record_of(cid)?;
        if rec.executor() != Some(m.signer) {
            return Err(Bad::WrongSender);
        }
        if !member_of(rec.pool_members(), &self.party()) {
            return Err(Bad::NotPoolMember);
        }
        let slot = self.slots.get_mut(&cid).ok_or(Bad::NoInstance)?;
        let plain = decrypt(&slot.key, &m.payload.state).map_err(|_| Bad::WrongKey)?;
        let state: ContractState = decode(&plain).map_err(|_| Bad::Malformed)?;
        slot.instance.update_state(state, m.payload.h);
        Ok(self.sign(Confirm { cid, h: m.payload.h }))
    }

    pub fn handle_confirms(
        &mut self,
        now: Seconds,
        batch: &SyncBatch,
        cid: ContractId,
        confs: &[Signed<Confirm>],
    ) -> Result<Signed<ExecutionResult>, Bad> {
        self.invoke(now, batch, "confirms", cid, |e| e.confirms(cid, confs))
    }

    fn confirms(&mut self, cid: ContractId, confs: &[Signed<Confirm>]) -> Result<Signed<ExecutionResult>, Bad> {
        let me = self.party();
        let rec = self.record_of(cid)?;
        if rec.executor() != Some(me) {
            return Err(Bad::NotExecutor);
        }
        let pool = rec.pool_members().to_vec();
        let valid: Vec<bool> = confs.iter().map(|c| self.ring.verify(c).is_ok()).collect();
        let slot = self.slots.get_mut(&cid).ok_or(Bad::NoInstance)?;
        if slot.open.is_empty() {
            return Err(Bad::NothingPending);
        }
        let pending = slot.pending.clone().expect("open implies pending");
        slot.open.retain(|p| pool.contains(p));
        for (c, ok) in confs.iter().zip(valid) {
            if !ok || c.payload.cid != cid || c.payload.h != pending.h {
                continue;
            }
            if let Some(i) = slot.open.iter().position(|p| *p == c.signer) {
                slot.open.remove(i);
            }
        }
        if slot.open != [me] {
            return Err(Bad::MissingConfirms(slot.open.iter().filter(|p| **p != me).count()));
        }
        slot.open.clear();
        slot.pending = None;
        let st = slot.instance.state();
        let payout = Withdraw { cid, level: st.payout_level, withdrawals: st.unspent.clone() };
        let public_state = slot.instance.get_state(StateFlag::Public);
        let payout = self.sign(payout);
        let body = ResultBody { public_state, payout, step: pending.step };
        let sealed = encrypt(&pending.result_key, &encode(&body));
        Ok(self.sign(ExecutionResult { cid, sealed, h: pending.h }))
    }

    // ---- creation ----

    fn pool_seed(&self, cid: ContractId) -> Digest {
        hash_parts(&[b"pool", &self.params.pool_seed.to_le_bytes(), &cid.to_le_bytes(), &self.party().to_bytes()])
    }

    fn pool_key(&self, cid: ContractId) -> SymKey {
        SymKey::from_bytes(self.key.derive(&[b"pool-key".as_slice(), &cid.to_le_bytes()].concat()).0)
    }

    /// CREATE. Unknown code yields a signed fail confirmation instead of a pool.
    pub fn handle_create(
        &mut self,
        now: Seconds,
        batch: &SyncBatch,
        m: &CreateRequest,
    ) -> Result<Result<Signed<InitAnnouncement>, Signed<CreationFailure>>, Bad> {
        self.invoke(now, batch, "create", m.cid, |e| e.create(m))
    }

    fn create(&mut self, m: &CreateRequest) -> Result<Result<Signed<InitAnnouncement>, Signed<CreationFailure>>, Bad> {
        let cid = m.cid;
        let rec = self.record_of(cid)?;
        if rec.creator != Some(self.party()) {
            return Err(Bad::NotCreator);
        }
        if rec.code_hash != hash(&m.code) {
            return Err(Bad::CodeMismatch);
        }
        if self.registry.init_contract(cid, &m.code, rec.created_at).is_err() {
            return Ok(Err(self.sign(CreationFailure { cid })));
        }
        let pool = sample_pool(self.replica().tees(), self.params.pool_size, self.pool_seed(cid));
        let key = self.pool_key(cid);
        let envelopes = pool
            .iter()
            .map(|p| self.ring.encrypt_to(*p, &encode(&key)).expect("pool members are registered"))
            .collect();
        self.creations.insert(cid, Creation { pool: pool.clone(), open: pool.clone() });
        Ok(Ok(self.sign(InitAnnouncement { cid, pool, envelopes, code: m.code.clone() })))
    }

    pub fn handle_init(
        &mut self,
        now: Seconds,
        batch: &SyncBatch,
        m: &Signed<InitAnnouncement>,
    ) -> Result<Signed<InitConfirm>, Bad> {
        self.invoke(now, batch, "init", m.payload.cid, |e| e.init(m))
    }

    fn init(&mut self, m: &Signed<InitAnnouncement>) -> Result<Signed<InitConfirm>, Bad> {
        let a = &m.payload;
        let cid = a.cid;
        self.verified(m)?;
        let me = self.party();
        let Some(i) = a.pool.iter().position(|p| *p == me) else {
            return Err(Bad::NotPoolMember);
        };
        let rec = self.record_of(cid)?;
        if rec.creator != Some(m.signer) {
            return Err(Bad::WrongSender);
        }
        if rec.code_hash != hash(&a.code) {
            return Err(Bad::CodeMismatch);
        }
        let created_at = rec.created_at;
        let digest = digest_of(m);
        if let Some(slot) = self.slots.get(&cid) {
            // the same INIT again, e.g. posted in a pool challenge after our
            // off-chain confirmation was lost: confirm without reinstalling
            return if slot.init_digest == digest { Ok(self.sign(InitConfirm { cid })) } else { Err(Bad::AlreadyInitialized) };
        }
        let envelope = a.envelopes.get(i).ok_or(Bad::Malformed)?;
        let key: SymKey =
            decode(&decrypt(&self.key.box_key(), envelope).map_err(|_| Bad::WrongKey)?).map_err(|_| Bad::Malformed)?;
        let instance = self.registry.init_contract(cid, &a.code, created_at).map_err(|_| Bad::CodeMismatch)?;
        self.slots.insert(cid, Slot { instance, key, init_digest: digest, open: vec![], pending: None });
        Ok(self.sign(InitConfirm { cid }))
    }

    pub fn handle_creation_confirms(
        &mut self,
        now: Seconds,
        batch: &SyncBatch,
        cid: ContractId,
        confs: &[Signed<InitConfirm>],
    ) -> Result<Signed<CreationStatement>, Bad> {
        self.invoke(now, batch, "creation_confirms", cid, |e| e.creation_confirms(cid, confs))
    }

    fn creation_confirms(&mut self, cid: ContractId, confs: &[Signed<InitConfirm>]) -> Result<Signed<CreationStatement>, Bad> {
        let me = self.party();
        let rec = self.record_of(cid)?;
        if rec.creator != Some(me) {
            return Err(Bad::NotCreator);
        }
        let settled = rec.pool.clone();
        let valid: Vec<bool> = confs.iter().map(|c| self.ring.verify(c).is_ok()).collect();
        let c = self.creations.get_mut(&cid).ok_or(Bad::NothingPending)?;
        if c.open.is_empty() {
            return Err(Bad::NothingPending);
        }
        if let Some(p) = &settled {
            c.open.retain(|m| p.contains(m));
        }
        for (conf, ok) in confs.iter().zip(valid) {
            if !ok || conf.payload.cid != cid {
                continue;
            }
            if let Some(i) = c.open.iter().position(|p| *p == conf.signer) {
                c.open.remove(i);
            }
        }
        if !c.open.is_empty() {
            return Err(Bad::MissingConfirms(c.open.len()));
        }
        let pool: Vec<PartyId> = match &settled {
            Some(p) => c.pool.iter().filter(|m| p.contains(m)).copied().collect(),
            None => c.pool.clone(),
        };
        self.creations.remove(&cid);
        if !pool.contains(&me) {
            self.slots.remove(&cid);
        }
        Ok(self.sign(CreationStatement { cid, pool }))
    }
}
