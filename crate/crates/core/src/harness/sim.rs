//! The discrete-event scheduler: one honest chain, `n` operators each hosting
//! an enclave, and the users driving the workload. Events are ordered by
//! `(time, enqueue sequence)`, and every random choice comes from a seeded
//! stream, so a scenario always replays to the same trace.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::chain::{Chain, Coins, Height, Seconds, Ticket, TxOutcome, TxRecord};
use crate::codec::encode;
use crate::contracts::DEFAULT_BUDGET;
use crate::crypto::{hash_parts, Digest, KeyRing, PartyId, PartyKind, Signed, SigningKey};
use crate::enclave::sync::{bootstrap, honest_batch};
use crate::enclave::{program_digest, Bad, Enclave, EnclaveParams, Platform, SyncBatch, SyncParams};
use crate::manager::{validate::execution_timeout, Manager, ManagerConfig, ManagerReceipt};
use crate::messages::{
    AttestationQuote, Confirm, ContractId, CreateRequest, ExecuteEnvelope, ExecuteRequest, ExecutionResult, FinalizeKind,
    InitAnnouncement, InitConfirm, ManagerCall, Registration, RequestKeys, StepKind, Update, Withdraw,
};
use crate::timeouts::{ConfigInvalid, TimeoutConfig, TimingModel};

use super::scenario::{Action, AdversaryPolicy, MsgKind, Scenario, Target, SCHEMA_VERSION};
use super::trace::{pid, Effect, Event, Trace, TxEvent, Via};

pub(super) const GENESIS_TIME: Seconds = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(super) enum Node {
    User(usize),
    Op(usize),
}

#[derive(Clone, Debug, Serialize)]
pub(super) enum Body {
    Execute(ExecuteEnvelope),
    Update(Signed<Update>),
    Confirm(Signed<Confirm>),
    Result(Signed<ExecutionResult>),
    Create(CreateRequest),
    Init(Signed<InitAnnouncement>),
    InitConfirm(Signed<InitConfirm>),
}

impl Body {
    fn kind(&self) -> MsgKind {
        match self {
            Body::Execute(_) => MsgKind::Execute,
            Body::Update(_) => MsgKind::Update,
            Body::Confirm(_) => MsgKind::Confirm,
            Body::Result(_) => MsgKind::Result,
            Body::Create(_) => MsgKind::Create,
            Body::Init(_) => MsgKind::Init,
            Body::InitConfirm(_) => MsgKind::InitConfirm,
        }
    }

    fn cid(&self) -> ContractId {
        match self {
            Body::Execute(m) => m.cid(),
            Body::Update(m) => m.payload.cid,
            Body::Confirm(m) => m.payload.cid,
            Body::Result(m) => m.payload.cid,
            Body::Create(m) => m.cid,
            Body::Init(m) => m.payload.cid,
            Body::InitConfirm(m) => m.payload.cid,
        }
    }

    fn h(&self) -> Option<Digest> {
        match self {
            Body::Execute(m) => Some(m.hash()),
            Body::Update(m) => Some(m.payload.h),
            Body::Confirm(m) => Some(m.payload.h),
            Body::Result(m) => Some(m.payload.h),
            _ => None,
        }
    }
}

pub(super) enum Ev {
    Block,
    Feed(usize),
    SideBlock(usize),
    Withhold(usize),
    Sidechain(usize),
    Action(usize),
    Deliver { from: Node, to: Node, body: Box<Body> },
    UserTimer { req: usize, gen: u64 },
    CreateTimer { contract: usize, gen: u64 },
    PropTimer { op: usize, cid: ContractId, h: Digest },
    InitTimer { op: usize, cid: ContractId },
}

pub(super) enum Feed {
    Honest,
    /// Fed nothing new.
    Frozen,
    /// Fed an attacker fork.
    Side(Box<Chain<Manager>>),
}

pub(super) struct Queued {
    pub env: ExecuteEnvelope,
    pub replayed: bool,
}

pub(super) struct Flight {
    pub env: ExecuteEnvelope,
    pub h: Digest,
    pub update: Signed<Update>,
    pub confirms: Vec<Signed<Confirm>>,
    pub challenged: bool,
    pub replayed: bool,
}

/// Executor-side work for one contract.
#[derive(Default)]
pub(super) struct Duty {
    pub queue: VecDeque<Queued>,
    pub flight: Option<Flight>,
    pub results: BTreeMap<Digest, Signed<ExecutionResult>>,
    /// Requests challenged on chain whose result must be posted.
    pub owed: BTreeSet<Digest>,
}

pub(super) struct CreatorDuty {
    pub ann: Option<Signed<InitAnnouncement>>,
    pub confirms: Vec<Signed<InitConfirm>>,
    pub done: bool,
}

pub(super) enum Parked {
    Update { m: Signed<Update>, onchain: bool },
    Init { m: Signed<InitAnnouncement>, onchain: bool },
    Create(CreateRequest),
}

pub(super) struct Parking {
    pub item: Parked,
    /// Retry once the mirror reaches this height.
    pub from: Height,
    /// Give up once the main chain passes this height.
    pub until: Height,
}

pub(super) struct Op {
    pub key: SigningKey,
    pub enclave: Enclave,
    /// Attestation quote, consumed at registration.
    pub quote: Option<AttestationQuote>,
    pub policy: Option<AdversaryPolicy>,
    pub feed: Feed,
    pub feed_error: Option<String>,
    pub duties: BTreeMap<ContractId, Duty>,
    pub creations: BTreeMap<ContractId, CreatorDuty>,
    /// Messages the enclave refused only because its view lagged.
    pub parked: Vec<Parking>,
}

pub(super) struct User {
    pub key: SigningKey,
    pub rng: ChaCha20Rng,
    /// Latest withdrawal received per contract index.
    pub payouts: BTreeMap<usize, Signed<Withdraw>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Phase {
    Pending,
    Creating,
    Live,
    Dead,
}

pub(super) struct Contract {
    pub code: Vec<u8>,
    pub creator: usize,
    pub user: usize,
    pub action: usize,
    pub cid: Option<ContractId>,
    pub phase: Phase,
    /// Main-chain tip after which enclaves have mirrored the latest coin movement.
    pub ready_at: Height,
    pub create_gen: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Done(Via),
    Failed(String),
}

/// Everything the oracle needs to know about one execution request.
#[derive(Clone, Debug)]
pub struct RequestInfo {
    pub contract: usize,
    pub cid: ContractId,
    pub user: PartyId,
    pub mv: Vec<u8>,
    pub h: Digest,
    pub outcome: Option<Outcome>,
}

pub(super) struct Request {
    pub info: RequestInfo,
    pub user: usize,
    pub action: usize,
    pub signed: Signed<ExecuteRequest>,
    pub keys: RequestKeys,
    pub sent_to: Option<PartyId>,
    pub gen: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum ActState {
    Waiting,
    Running,
    Resolved,
}

#[derive(Clone, Copy, Debug)]
pub(super) enum Owner {
    Action(usize),
    Challenge(usize),
    CreatorChallenge(usize),
    WatchChallenge { op: usize, cid: ContractId, h: Digest },
    Op,
    Finalize,
}

pub struct Run {
    pub trace: Trace,
    /// Whether the workload finished before the horizon.
    pub complete: bool,
    pub chain: Chain<Manager>,
    pub enclaves: Vec<Enclave>,
    /// Contract id per created contract, in workload order.
    pub contracts: Vec<Option<ContractId>>,
    pub requests: Vec<RequestInfo>,
}

pub(super) struct Sim {
    pub sc: Scenario,
    pub sync: SyncParams,
    pub timeouts: TimeoutConfig,
    pub model: TimingModel,
    pub ring: Arc<KeyRing>,
    pub chain: Chain<Manager>,
    pub ops: Vec<Op>,
    pub users: Vec<User>,
    pub contracts: Vec<Contract>,
    pub requests: Vec<Request>,
    pub actions: Vec<ActState>,
    pub due: Vec<bool>,
    pub by_enclave: BTreeMap<PartyId, usize>,
    pub by_user: BTreeMap<PartyId, usize>,
    pub owners: BTreeMap<Ticket, Owner>,
    pub challenger: BTreeMap<ContractId, PartyId>,
    pub finalizing: BTreeSet<(ContractId, FinalizeKind, Height, u64)>,
    pub trace: Trace,
    pub now: Seconds,
    pub t0: Seconds,
    queue: BTreeMap<(Seconds, u64), Ev>,
    seq: u64,
    block_rng: ChaCha20Rng,
    incl_rng: ChaCha20Rng,
    /// Operators whose mirror advanced while handling the current event.
    pub dirty: BTreeSet<usize>,
}

fn stream(seed: u64, label: &[u8]) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(hash_parts(&[b"sim", &seed.to_le_bytes(), label]).0)
}

/// Code that no enclave knows, for creations meant to fail.
pub fn unknown_code() -> Vec<u8> {
    b"pose-contract/unknown/1".to_vec()
}

pub fn run(sc: &Scenario) -> Result<Run, ConfigInvalid> {
    sc.validate()?;
    let mut sim = Sim::new(sc)?;
    sim.setup();
    let complete = sim.main_loop();
    Ok(sim.finish(complete))
}

impl Sim {
    fn new(sc: &Scenario) -> Result<Sim, ConfigInvalid> {
        let timeouts = sc.timeout_config()?;
        let ring = Arc::new(KeyRing::new(sc.seed));
        let platform = Platform::new(ring.generate(PartyKind::Platform));
        let alpha = sc.chain.alpha;
        let gamma = sc.chain.gamma;
        let manager = ManagerConfig {
            timeouts,
            evidence_slack: alpha + gamma + 1,
            program_digest: program_digest(),
            platform: platform.party(),
        };
        let sync = sc.sync_params();
        let params = EnclaveParams {
            sync,
            manager: manager.clone(),
            pool_size: sc.pool_size,
            pool_seed: sc.seed,
            step_budget: DEFAULT_BUDGET,
        };
        let chain = Chain::new(sc.chain, Manager::new(manager, ring.clone()), GENESIS_TIME);
        let mut ops = Vec::with_capacity(sc.n);
        for _ in 0..sc.n {
            let key = ring.generate(PartyKind::Operator);
            let (enclave, quote) = Enclave::install(&platform, ring.clone(), ring.generate(PartyKind::Enclave), params.clone());
            ops.push(Op {
                key,
                enclave,
                quote: Some(quote),
                policy: None,
                feed: Feed::Honest,
                feed_error: None,
                duties: BTreeMap::new(),
                creations: BTreeMap::new(),
                parked: vec![],
            });
        }
        let users: Vec<User> = (0..sc.users)
            .map(|i| User {
                key: ring.generate(PartyKind::User),
                rng: stream(sc.seed, &[b"user".as_slice(), &(i as u64).to_le_bytes()].concat()),
                payouts: BTreeMap::new(),
            })
            .collect();
        let contracts = sc
            .workload
            .iter()
            .enumerate()
            .filter_map(|(k, a)| match a {
                Action::Create { user, kind, creator, .. } => Some((k, *user, kind.code(), *creator)),
                Action::CreateUnknown { user, creator, .. } => Some((k, *user, unknown_code(), *creator)),
                _ => None,
            })
            .map(|(action, user, code, creator)| Contract {
                code,
                creator,
                user,
                action,
                cid: None,
                phase: Phase::Pending,
                ready_at: 0,
                create_gen: 0,
            })
            .collect();
        let by_enclave = ops.iter().enumerate().map(|(i, o)| (o.enclave.party(), i)).collect();
        let by_user = users.iter().enumerate().map(|(i, u)| (u.key.party(), i)).collect();
        Ok(Sim {
            sync,
            timeouts,
            model: sc.timing_model(),
            ring,
            chain,
            ops,
            users,
            contracts,
            requests: vec![],
            actions: vec![ActState::Waiting; sc.workload.len()],
            due: vec![false; sc.workload.len()],
            by_enclave,
            by_user,
            owners: BTreeMap::new(),
            challenger: BTreeMap::new(),
            finalizing: BTreeSet::new(),
            trace: Trace::new(),
            now: GENESIS_TIME,
            t0: 0,
            queue: BTreeMap::new(),
            seq: 0,
            block_rng: stream(sc.seed, b"blocks"),
            incl_rng: stream(sc.seed, b"inclusion"),
            dirty: BTreeSet::new(),
            sc: sc.clone(),
        })
    }
}

impl Sim {
    pub(super) fn schedule(&mut self, at: Seconds, ev: Ev) {
        self.queue.insert((at, self.seq), ev);
        self.seq += 1;
    }

    pub(super) fn emit(&mut self, ev: Event) {
        self.trace.push(self.now, ev);
    }

    pub(super) fn note(&mut self, what: String) {
        self.emit(Event::Timer { what });
    }

    fn next_interval(&mut self) -> Seconds {
        let p = self.sc.chain;
        let j = p.block_time_jitter as i64;
        let d = self.block_rng.gen_range(-j..=j);
        (p.block_time as i64 + d).max(1) as Seconds
    }

    fn setup(&mut self) {
        let gamma = self.sc.chain.gamma;
        let mut ops = Vec::new();
        for op in &self.ops {
            ops.push(pid(&op.enclave.party()));
        }
        self.emit(Event::Meta {
            schema_version: SCHEMA_VERSION,
            scenario: self.sc.name.clone(),
            seed: self.sc.seed,
            n: self.sc.n,
            byzantine: self.sc.byzantine(),
            pool_size: self.sc.pool_size,
            gamma,
            mirror_depth: self.sync.mirror_depth,
            enclaves: ops,
        });
        for _ in 0..gamma + 2 {
            self.now += self.next_interval();
            self.step_block();
        }
        for i in 0..self.ops.len() {
            let (headers, calls, proof) = bootstrap(&self.chain);
            let now = self.now;
            let op = &mut self.ops[i];
            let evidence = op.enclave.init_sync(now, headers, &calls, &proof).expect("honest bootstrap material");
            let reg = Registration { enclave: op.enclave.party(), quote: op.quote.take().expect("installed once"), evidence };
            let call = ManagerCall::Register(self.ring.sign(&op.key, reg).expect("operator key is registered"));
            let sender = op.key.party();
            let t = self.chain.submit_tx(call.to_tx(sender, 0));
            self.owners.insert(t, Owner::Op);
        }
        for _ in 0..self.sync.mirror_depth + 1 {
            self.now += self.next_interval();
            self.step_block();
        }
        debug_assert_eq!(self.chain.state().tees().len(), self.ops.len());
        self.t0 = self.now;
        self.emit(Event::Ready);
        let static_ops: Vec<(usize, AdversaryPolicy)> = self
            .sc
            .adversaries
            .iter()
            .filter_map(|c| match c.target {
                Target::Operator(i) => Some((i, c.policy.clone())),
                Target::Pool { .. } => None,
            })
            .collect();
        for (i, policy) in static_ops {
            self.corrupt(i, policy);
        }
        for k in 0..self.sc.workload.len() {
            let at = self.t0 + self.sc.workload[k].at();
            self.schedule(at, Ev::Action(k));
        }
        let first = self.now + self.next_interval();
        self.schedule(first, Ev::Block);
        if let Some(f) = self.sc.network.feed_interval {
            for i in 0..self.ops.len() {
                self.schedule(self.t0 + f, Ev::Feed(i));
            }
        }
    }

    /// Hands operator `i` to the adversary; its enclave stays untouched.
    pub(super) fn corrupt(&mut self, i: usize, policy: AdversaryPolicy) {
        if self.ops[i].policy.is_some() {
            return;
        }
        if let Some(after) = policy.withhold_blocks_after {
            let at = (self.t0 + after).max(self.now);
            self.schedule(at, Ev::Withhold(i));
        }
        if let Some(s) = policy.sidechain {
            let at = (self.t0 + s.at).max(self.now);
            self.schedule(at, Ev::Sidechain(i));
        }
        self.ops[i].policy = Some(policy);
        let enclave = pid(&self.ops[i].enclave.party());
        self.emit(Event::Corrupt { operator: i, enclave });
    }

    fn main_loop(&mut self) -> bool {
        let stop = self.t0 + self.sc.horizon;
        while let Some(((t, _), ev)) = self.queue.pop_first() {
            if t > stop {
                break;
            }
            self.now = t;
            let block = matches!(ev, Ev::Block);
            self.handle(ev);
            self.settle_dirty();
            self.poll_actions();
            self.settle_dirty();
            if block && self.complete() {
                self.emit(Event::End { complete: true });
                return true;
            }
        }
        self.now = self.now.max(stop);
        self.emit(Event::End { complete: false });
        false
    }

    fn finish(self, complete: bool) -> Run {
        Run {
            trace: self.trace,
            complete,
            chain: self.chain,
            enclaves: self.ops.into_iter().map(|o| o.enclave).collect(),
            contracts: self.contracts.iter().map(|c| c.cid).collect(),
            requests: self.requests.into_iter().map(|r| r.info).collect(),
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Block => {
                self.step_block();
                let next = self.now + self.next_interval();
                self.schedule(next, Ev::Block);
            }
            Ev::Feed(i) => {
                self.feed(i);
                let f = self.sc.network.feed_interval.expect("scheduled only with an interval");
                self.schedule(self.now + f, Ev::Feed(i));
            }
            Ev::SideBlock(i) => self.side_block(i),
            Ev::Withhold(i) => {
                self.ops[i].feed = Feed::Frozen;
                self.note(format!("operator {i} stops feeding blocks"));
            }
            Ev::Sidechain(i) => self.start_sidechain(i),
            Ev::Action(k) => self.due[k] = true,
            Ev::Deliver { from, to, body } => self.deliver(from, to, *body),
            Ev::UserTimer { req, gen } => self.user_timer(req, gen),
            Ev::CreateTimer { contract, gen } => self.create_timer(contract, gen),
            Ev::PropTimer { op, cid, h } => self.prop_timer(op, cid, h),
            Ev::InitTimer { op, cid } => self.init_timer(op, cid),
        }
    }

    // ---- chain ----

    pub(super) fn tip(&self) -> Height {
        self.chain.tip()
    }

    fn step_block(&mut self) {
        let header = self.chain.mine_block_at(self.now).expect("scheduler time advances");
        let block = self.chain.block(header.number).expect("just mined").clone();
        let txs = block.txs.iter().map(tx_event).collect();
        self.emit(Event::Block {
            number: header.number,
            timestamp: header.timestamp,
            hash: header.digest().to_hex(),
            incr_tx_hash: block.incr_tx_hash.to_hex(),
            txs,
        });
        if self.sc.network.feed_interval.is_none() {
            for i in 0..self.ops.len() {
                if matches!(self.ops[i].feed, Feed::Honest) {
                    self.feed(i);
                }
            }
        }
        for r in &block.txs {
            self.dispatch(r, header.number);
        }
        let tip = self.tip();
        for op in &mut self.ops {
            op.parked.retain(|p| p.until >= tip);
        }
        self.check_expiries();
    }

    fn side_block(&mut self, i: usize) {
        let interval = match &self.ops[i].policy {
            Some(AdversaryPolicy { sidechain: Some(s), .. }) => s.interval,
            _ => return,
        };
        if let Feed::Side(side) = &mut self.ops[i].feed {
            let ts = self.now.max(side.tip_header().timestamp + 1);
            side.mine_block_at(ts).expect("attacker timestamps advance");
        } else {
            return;
        }
        self.feed(i);
        self.schedule(self.now + interval.max(1), Ev::SideBlock(i));
    }

    fn start_sidechain(&mut self, i: usize) {
        let Some(AdversaryPolicy { sidechain: Some(s), .. }) = self.ops[i].policy.clone() else { return };
        let fork_at = self.tip().saturating_sub(s.depth);
        let fork_time = self.chain.header(fork_at).expect("below tip").timestamp;
        let pace = (self.now.saturating_sub(fork_time) / s.depth.max(1)).max(1);
        let side = self.chain.fork_sidechain(crate::chain::SidechainPolicy {
            fork_at,
            blocks: s.depth,
            start_time: fork_time,
            interval: pace,
        });
        self.ops[i].feed = Feed::Side(Box::new(side));
        self.note(format!("operator {i} switches its enclave to a fork at block {fork_at}"));
        self.feed(i);
        self.schedule(self.now + s.interval.max(1), Ev::SideBlock(i));
    }

    pub(super) fn batch_for(&self, i: usize) -> SyncBatch {
        let op = &self.ops[i];
        let Some(view) = op.enclave.view() else { return SyncBatch::default() };
        match &op.feed {
            Feed::Honest => honest_batch(&self.chain, view, &self.sync),
            Feed::Frozen => SyncBatch::default(),
            Feed::Side(side) => honest_batch(side, view, &self.sync),
        }
    }

    pub(super) fn mirror_height(&self, i: usize) -> Height {
        self.ops[i].enclave.view().map_or(0, |v| v.mirror_height())
    }

    fn invoke_event(&mut self, i: usize, input: &str, cid: Option<ContractId>, outcome: String) {
        let view = self.ops[i].enclave.view().expect("initialized at setup");
        let ev = Event::Invoke {
            enclave: pid(&self.ops[i].enclave.party()),
            input: input.to_string(),
            cid,
            outcome,
            mirror_height: view.mirror_height(),
            mirror_hash: view.checkpoint().digest().to_hex(),
            chain_tip: self.tip(),
        };
        self.emit(ev);
    }

    fn feed(&mut self, i: usize) {
        if matches!(self.ops[i].feed, Feed::Frozen) || self.ops[i].enclave.view().is_none() {
            return;
        }
        let before = self.mirror_height(i);
        let batch = self.batch_for(i);
        let out = self.ops[i].enclave.sync(self.now, &batch).err().map(|e| e.to_string());
        if out != self.ops[i].feed_error {
            self.ops[i].feed_error = out.clone();
            self.invoke_event(i, "sync", None, out.unwrap_or_else(|| "ok".into()));
        }
        if self.mirror_height(i) > before {
            self.dirty.insert(i);
        }
    }

    /// Runs one enclave handler on the operator's current feed and logs it.
    pub(super) fn call<T>(
        &mut self,
        i: usize,
        input: &str,
        cid: ContractId,
        f: impl FnOnce(&mut Enclave, Seconds, &SyncBatch) -> Result<T, Bad>,
    ) -> Result<T, Bad> {
        let before = self.mirror_height(i);
        let batch = self.batch_for(i);
        let now = self.now;
        let out = f(&mut self.ops[i].enclave, now, &batch);
        let summary = match &out {
            Ok(_) => "ok".to_string(),
            Err(e) => e.to_string(),
        };
        self.invoke_event(i, input, Some(cid), summary);
        if self.mirror_height(i) > before {
            self.dirty.insert(i);
        }
        out
    }

    fn settle_dirty(&mut self) {
        while let Some(i) = self.dirty.pop_first() {
            self.on_mirror_advance(i);
        }
    }

    pub(super) fn onchain(&self, i: usize) -> bool {
        self.ops[i].policy.as_ref().is_none_or(|p| p.onchain)
    }

    pub(super) fn submit(&mut self, call: ManagerCall, sender: PartyId, value: Coins, owner: Owner) {
        let max = self.sc.network.max_inclusion_delay;
        let delay = if max > 1 { self.incl_rng.gen_range(1..=max) } else { 1 };
        let t = self.chain.submit_tx_with_delay(call.to_tx(sender, value), delay).expect("delay within alpha");
        self.owners.insert(t, owner);
    }

    /// Submits on behalf of operator `i`, unless its policy keeps it off chain.
    pub(super) fn submit_op(&mut self, i: usize, call: ManagerCall, owner: Owner) -> bool {
        if !self.onchain(i) {
            return false;
        }
        let sender = self.ops[i].key.party();
        self.submit(call, sender, 0, owner);
        true
    }

    // ---- network ----

    pub(super) fn node_id(&self, n: Node) -> PartyId {
        match n {
            Node::User(u) => self.users[u].key.party(),
            Node::Op(i) => self.ops[i].enclave.party(),
        }
    }

    pub(super) fn send(&mut self, from: Node, to: Node, body: Body) {
        let kind = body.kind();
        let mut delay = self.sc.network.delay;
        let mut dropped = false;
        let ends: &[Node] = if from == to { &[from] } else { &[from, to] };
        for n in ends {
            if let Node::Op(i) = n {
                if let Some(p) = &self.ops[*i].policy {
                    dropped |= p.drop.drops(kind);
                    delay += p.delay;
                }
            }
        }
        let deliver_at = (!dropped).then_some(self.now + delay);
        let ev = Event::Send {
            from: pid(&self.node_id(from)),
            to: pid(&self.node_id(to)),
            kind,
            cid: body.cid(),
            h: body.h().map(|h| h.to_hex()),
            bytes: hex::encode(encode(&body)),
            deliver_at,
        };
        self.emit(ev);
        if let Some(at) = deliver_at {
            self.schedule(at, Ev::Deliver { from, to, body: Box::new(body) });
        }
    }

    fn deliver(&mut self, from: Node, to: Node, body: Body) {
        match (to, body) {
            (Node::Op(i), Body::Execute(env)) => self.on_execute(i, env),
            (Node::Op(i), Body::Update(m)) => self.watchdog_update(i, m, false),
            (Node::Op(i), Body::Confirm(c)) => self.on_confirm(i, c),
            (Node::Op(i), Body::Create(req)) => self.creator_create(i, req),
            (Node::Op(i), Body::Init(ann)) => self.member_init(i, ann, false),
            (Node::Op(i), Body::InitConfirm(c)) => self.on_init_confirm(i, c),
            (Node::User(u), Body::Result(r)) => self.user_result(u, &r, Via::Offchain),
            (to, body) => self.note(format!("{:?} ignores {:?} from {:?}", to, body.kind(), from)),
        }
    }

    // ---- receipts ----

    fn dispatch(&mut self, r: &TxRecord<ManagerReceipt>, height: Height) {
        let owner = self.owners.remove(&r.ticket);
        let call = ManagerCall::from_tx(&r.tx).ok();
        let receipt = match &r.outcome {
            TxOutcome::Accepted(receipt) => receipt.clone(),
            TxOutcome::Rejected(err) => {
                self.rejected(owner, err.clone(), height);
                return;
            }
        };
        if let Some(Owner::Action(k)) = owner {
            self.action_included(k, &receipt, height);
        }
        match receipt {
            ManagerReceipt::Registered(_) | ManagerReceipt::Deposited { .. } | ManagerReceipt::PaidOut { .. } => {}
            ManagerReceipt::Created(_) => {}
            ManagerReceipt::CreationFinalized { cid, pool } => self.creation_finalized(cid, pool, height),
            ManagerReceipt::CreationFailed(cid) | ManagerReceipt::CreatorTimedOut(cid) => self.creation_dead(cid),
            ManagerReceipt::ExecutorChallenged(cid) => {
                self.challenger.insert(cid, r.tx.sender);
                if let Some(ManagerCall::ChallengeExecutor(env)) = call {
                    self.executor_challenged(cid, env);
                }
            }
            ManagerReceipt::ExecutorAnswered(_) => {
                if let Some(ManagerCall::ExecutorResponse(res)) = call {
                    if let Some(u) = self.requests.iter().find(|q| q.info.h == res.payload.h).map(|q| q.user) {
                        self.user_result(u, &res, Via::Onchain);
                    }
                }
            }
            ManagerReceipt::ExecutorKicked { cid, removed } => self.executor_kicked(cid, removed),
            ManagerReceipt::WatchdogsChallenged(cid) => {
                if let Some(ManagerCall::ChallengeWatchdogs(pre)) = call {
                    self.watchdogs_challenged(cid, pre);
                }
            }
            ManagerReceipt::WatchdogConfirmed { cid, .. } => {
                if let Some(ManagerCall::WatchdogResponse(conf)) = call {
                    self.onchain_confirm(cid, conf);
                }
            }
            ManagerReceipt::WatchdogsKicked { cid, .. } => self.watchdogs_kicked(cid, height),
            ManagerReceipt::CreatorChallenged(cid) => {
                self.challenger.insert(cid, r.tx.sender);
                if let Some(ManagerCall::ChallengeCreator(req)) = call {
                    self.creator_challenged(cid, req);
                }
            }
            ManagerReceipt::CreationPoolChallenged(_) => {
                if let Some(ManagerCall::ChallengeCreationPool(ann)) = call {
                    self.creation_pool_challenged(ann);
                }
            }
            ManagerReceipt::CreationPoolConfirmed { cid, .. } => {
                if let Some(ManagerCall::CreationPoolResponse(conf)) = call {
                    self.onchain_init_confirm(cid, conf);
                }
            }
            ManagerReceipt::CreationPoolSettled { cid, .. } => self.creation_pool_settled(cid, height),
        }
    }

    fn rejected(&mut self, owner: Option<Owner>, err: String, height: Height) {
        let retry = self.now + self.sc.chain.max_interval();
        match owner {
            Some(Owner::Action(k)) => {
                self.note(format!("action {k} rejected on chain: {err}"));
                if let Some(c) = self.contracts.iter().position(|c| c.action == k) {
                    self.contracts[c].phase = Phase::Dead;
                }
                let _ = height;
                self.resolve_action(k);
            }
            Some(Owner::Challenge(req)) => {
                let gen = self.requests[req].gen;
                self.schedule(retry, Ev::UserTimer { req, gen });
            }
            Some(Owner::CreatorChallenge(contract)) => {
                let gen = self.contracts[contract].create_gen;
                self.schedule(retry, Ev::CreateTimer { contract, gen });
            }
            Some(Owner::WatchChallenge { op, cid, h }) => {
                if let Some(f) = self.ops[op].duties.get_mut(&cid).and_then(|d| d.flight.as_mut()) {
                    if f.h == h {
                        f.challenged = false;
                    }
                }
                self.schedule(retry, Ev::PropTimer { op, cid, h });
            }
            Some(Owner::Op) | Some(Owner::Finalize) | None => {}
        }
    }

    /// Posts timeouts for challenges that will have expired by the next block.
    fn check_expiries(&mut self) {
        let next = self.tip() + 1;
        let t = self.timeouts;
        let mut due = Vec::new();
        for (cid, rec) in self.chain.state().contracts() {
            if rec.is_crashed() {
                continue;
            }
            let creating = rec.creator.is_some();
            if let Some(b) = rec.exec_chal.block {
                let to = if creating { t.onchain_creation } else { execution_timeout(rec, &t) };
                if (creating || rec.exec_chal.msg.is_some()) && b + to <= next {
                    due.push((*cid, FinalizeKind::Executor, b, to));
                }
            }
            if let Some(b) = rec.watch_chal.block {
                let to = if creating { t.onchain_creation_propagation } else { t.onchain_propagation };
                if b + to <= next {
                    due.push((*cid, FinalizeKind::Watchdogs, b, to));
                }
            }
        }
        for key in due {
            if !self.finalizing.insert(key) {
                continue;
            }
            let (cid, kind, _, _) = key;
            let sender = self.finalizer(cid, kind);
            self.submit(ManagerCall::Finalize { kind, cid }, sender, 0, Owner::Finalize);
        }
    }

    /// The party with an interest in closing an expired challenge.
    fn finalizer(&self, cid: ContractId, kind: FinalizeKind) -> PartyId {
        let fallback = self
            .contracts
            .iter()
            .find(|c| c.cid == Some(cid))
            .map(|c| self.users[c.user].key.party())
            .unwrap_or_else(|| self.users[0].key.party());
        let rec = self.chain.state().record(cid).expect("checked by caller");
        match kind {
            FinalizeKind::Executor => self.challenger.get(&cid).copied().unwrap_or(fallback),
            FinalizeKind::Watchdogs => {
                let lead = rec.creator.or_else(|| rec.executor());
                match lead.and_then(|p| self.by_enclave.get(&p)) {
                    Some(&i) if self.onchain(i) => self.ops[i].key.party(),
                    _ => fallback,
                }
            }
        }
    }

    fn complete(&self) -> bool {
        if self.actions.iter().any(|a| *a != ActState::Resolved) || self.chain.pending_count() > 0 {
            return false;
        }
        if self.queue.values().any(|e| matches!(e, Ev::Deliver { .. })) {
            return false;
        }
        for (cid, rec) in self.chain.state().contracts() {
            if rec.is_crashed() {
                continue;
            }
            if rec.creator.is_some() || rec.exec_chal.block.is_some() || rec.watch_chal.block.is_some() {
                return false;
            }
            for p in rec.pool_members() {
                let i = self.by_enclave[p];
                if !self.ops[i].parked.is_empty() {
                    return false;
                }
            }
            let exec = self.by_enclave[&rec.executor().expect("live")];
            if let Some(d) = self.ops[exec].duties.get(cid) {
                if d.flight.is_some() || !d.queue.is_empty() {
                    return false;
                }
            }
        }
        true
    }

    // ---- helpers shared by the agents ----

    pub(super) fn op_of(&self, p: &PartyId) -> Option<usize> {
        self.by_enclave.get(p).copied()
    }

    pub(super) fn contract_of(&self, cid: ContractId) -> Option<usize> {
        self.contracts.iter().position(|c| c.cid == Some(cid))
    }

    pub(super) fn step_name(step: StepKind) -> String {
        match step {
            StepKind::Applied => "applied",
            StepKind::Dummy => "dummy",
            StepKind::Reverted => "reverted",
        }
        .to_string()
    }
}

fn tx_event(r: &TxRecord<ManagerReceipt>) -> TxEvent {
    let call = ManagerCall::from_tx(&r.tx).ok();
    let (accepted, error, receipt) = match &r.outcome {
        TxOutcome::Accepted(rc) => (true, None, Some(rc)),
        TxOutcome::Rejected(e) => (false, Some(e.clone()), None),
    };
    let created = match receipt {
        Some(ManagerReceipt::Created(c)) => Some(*c),
        _ => None,
    };
    let effect = match receipt {
        Some(ManagerReceipt::Deposited { coins, .. }) => Effect::Deposit { coins: *coins },
        Some(ManagerReceipt::PaidOut { level, total, .. }) => Effect::Payout { level: *level, total: *total },
        _ => Effect::None,
    };
    TxEvent {
        sender: pid(&r.tx.sender),
        kind: call.as_ref().map_or("unparsable", |c| c.kind().name()).to_string(),
        cid: call.as_ref().and_then(|c| c.cid()).or(created),
        value: r.tx.value,
        data: hex::encode(&r.tx.data),
        accepted,
        effect,
        error,
    }
}
