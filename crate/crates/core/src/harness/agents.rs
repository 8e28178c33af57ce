//! What each party does with the messages, timers and receipts the scheduler
//! hands it: executors, watchdogs and creators on the operator side, and the
//! users driving the workload.

use rand::Rng;

use crate::chain::Height;
use crate::codec::{decode, encode};
use crate::contracts::counter::CounterMove;
use crate::contracts::escrow::EscrowMove;
use crate::contracts::quicksort::SortMove;
use crate::contracts::rps::RpsMove;
use crate::crypto::{decrypt, encrypt, hash, Digest, PartyId, Signed, SymKey};
use crate::enclave::Bad;
use crate::manager::ManagerReceipt;
use crate::messages::{
    request_hash, Confirm, ContractId, CreateRequest, Deposit, ExecuteEnvelope, ExecuteRequest, ExecutionResult,
    InitAnnouncement, InitConfirm, ManagerCall, RequestKeys, ResultBody, Update,
};

use super::scenario::{Action, MoveSpec, Target};
use super::sim::{
    ActState, Body, CreatorDuty, Flight, Node, Outcome, Owner, Parked, Parking, Phase, Queued, Request, RequestInfo, Sim,
};
use super::trace::{pid, Event, Via};

/// Refusals that only mean the enclave's view has not caught up yet.
fn lagging(e: &Bad) -> bool {
    matches!(e, Bad::Sync(_) | Bad::Unusable | Bad::NoRecord | Bad::NoInstance | Bad::WrongSender | Bad::NotReady)
}

impl Sim {
    fn me(&self, i: usize) -> PartyId {
        self.ops[i].enclave.party()
    }

    /// Pool of `cid` as the operator's enclave currently mirrors it.
    fn mirror_pool(&self, i: usize, cid: ContractId) -> Vec<PartyId> {
        self.ops[i]
            .enclave
            .mirror()
            .and_then(|m| m.record(cid))
            .map(|r| r.pool_members().to_vec())
            .unwrap_or_default()
    }

    fn mirror_executor(&self, i: usize, cid: ContractId) -> Option<PartyId> {
        let rec = self.ops[i].enclave.mirror()?.record(cid)?;
        if rec.creator.is_some() {
            return None;
        }
        rec.executor()
    }

    fn park(&mut self, i: usize, item: Parked) {
        let until = self.tip() + self.sync.mirror_depth + self.sc.chain.alpha + 2;
        // whatever the message refers to is on chain by now, so the mirror needs the current tip
        let from = self.tip().max(self.mirror_height(i) + 1);
        self.ops[i].parked.push(Parking { item, from, until });
    }

    fn emit_pool(&mut self, cid: ContractId) {
        let pool = self.chain.state().record(cid).map(|r| r.pool_members().iter().map(pid).collect()).unwrap_or_default();
        self.emit(Event::Pool { cid, pool });
    }

    pub(super) fn on_mirror_advance(&mut self, i: usize) {
        let parked = std::mem::take(&mut self.ops[i].parked);
        let tip = self.tip();
        let mirror = self.mirror_height(i);
        for p in parked {
            if p.until < tip {
                continue;
            }
            if p.from > mirror {
                self.ops[i].parked.push(p);
                continue;
            }
            let before = self.ops[i].parked.len();
            match p.item {
                Parked::Update { m, onchain } => self.watchdog_update(i, m, onchain),
                Parked::Init { m, onchain } => self.member_init(i, m, onchain),
                Parked::Create(req) => self.creator_create(i, req),
            }
            // a re-parked item keeps its deadline and is retried on the next advance
            if self.ops[i].parked.len() > before {
                let last = self.ops[i].parked.last_mut().expect("just pushed");
                last.until = p.until;
                last.from = mirror + 1;
            }
        }
        let cids: Vec<ContractId> = self.ops[i].duties.keys().copied().collect();
        for cid in cids {
            self.try_confirms(i, cid);
            self.pump(i, cid);
        }
        let creating: Vec<ContractId> = self.ops[i].creations.keys().copied().collect();
        for cid in creating {
            self.try_creation(i, cid);
        }
    }

    // ---- executor ----

    pub(super) fn on_execute(&mut self, i: usize, env: ExecuteEnvelope) {
        let cid = env.cid();
        let h = env.hash();
        let d = self.ops[i].duties.entry(cid).or_default();
        if let Some(res) = d.results.get(&h).cloned() {
            if let Some(&u) = self.by_user.get(&env.request.signer) {
                self.send(Node::Op(i), Node::User(u), Body::Result(res));
            }
            return;
        }
        if d.flight.as_ref().is_some_and(|f| f.h == h) || d.queue.iter().any(|q| q.env.hash() == h) {
            return;
        }
        d.queue.push_back(Queued { env, replayed: false });
        self.pump(i, cid);
    }

    fn pump(&mut self, i: usize, cid: ContractId) {
        let me = self.me(i);
        let Some(d) = self.ops[i].duties.get_mut(&cid) else { return };
        if d.flight.is_some() || d.queue.is_empty() {
            return;
        }
        if self.mirror_executor(i, cid) != Some(me) {
            return;
        }
        let d = self.ops[i].duties.get_mut(&cid).expect("checked");
        let q = d.queue.pop_front().expect("checked");
        let env = q.env.clone();
        match self.call(i, "execute", cid, |e, now, b| e.handle_execute(now, b, &env)) {
            Ok(update) => self.start_flight(i, q, update),
            Err(e) if lagging(&e) || matches!(e, Bad::NotExecutor | Bad::PropagationPending) => {
                self.ops[i].duties.get_mut(&cid).expect("checked").queue.push_front(q);
            }
            Err(e) => self.note(format!("operator {i} drops request {}: {e}", q.env.hash().to_hex())),
        }
    }

    fn start_flight(&mut self, i: usize, q: Queued, update: Signed<Update>) {
        let cid = q.env.cid();
        let h = q.env.hash();
        let me = self.me(i);
        let step = self.ops[i].enclave.pending_step(cid).expect("execution just succeeded");
        let ev = Event::Step {
            cid,
            h: h.to_hex(),
            by: pid(&me),
            step: Sim::step_name(step),
            final_height: self.mirror_height(i),
        };
        self.emit(ev);
        let pool = self.mirror_pool(i, cid);
        let only = self.ops[i].policy.as_ref().and_then(|p| p.update_to.clone());
        let targets: Vec<PartyId> = pool
            .iter()
            .enumerate()
            .filter(|(pos, p)| **p != me && only.as_ref().is_none_or(|o| o.contains(pos)))
            .map(|(_, p)| *p)
            .collect();
        for p in targets {
            let j = self.by_enclave[&p];
            self.send(Node::Op(i), Node::Op(j), Body::Update(update.clone()));
        }
        let d = self.ops[i].duties.get_mut(&cid).expect("flight belongs to a duty");
        d.flight = Some(Flight { env: q.env, h, update, confirms: vec![], challenged: false, replayed: q.replayed });
        let wait = self.timeouts.offchain_propagation;
        self.schedule(self.now + wait, super::sim::Ev::PropTimer { op: i, cid, h });
        self.try_confirms(i, cid);
    }

    /// Hands the collected confirmations to the enclave once they cover the
    /// pool it mirrors.
    fn try_confirms(&mut self, i: usize, cid: ContractId) {
        let me = self.me(i);
        let pool = self.mirror_pool(i, cid);
        let Some(f) = self.ops[i].duties.get(&cid).and_then(|d| d.flight.as_ref()) else { return };
        let covered = pool.iter().all(|p| *p == me || f.confirms.iter().any(|c| c.signer == *p));
        if !covered {
            return;
        }
        let confs = f.confirms.clone();
        if let Ok(res) = self.call(i, "confirms", cid, |e, now, b| e.handle_confirms(now, b, cid, &confs)) {
            self.finish_flight(i, cid, res);
        }
    }

    fn finish_flight(&mut self, i: usize, cid: ContractId, res: Signed<ExecutionResult>) {
        let me = self.me(i);
        let d = self.ops[i].duties.get_mut(&cid).expect("flight belongs to a duty");
        let f = d.flight.take().expect("confirmed a flight");
        d.results.insert(f.h, res.clone());
        let owed = d.owed.remove(&f.h);
        self.emit(Event::Emitted { cid, h: f.h.to_hex(), by: pid(&me) });
        if owed {
            self.submit_op(i, ManagerCall::ExecutorResponse(res.clone()), Owner::Op);
        }
        if !f.replayed {
            if let Some(&u) = self.by_user.get(&f.env.request.signer) {
                self.send(Node::Op(i), Node::User(u), Body::Result(res));
            }
            if self.ops[i].policy.as_ref().is_some_and(|p| p.replay) {
                let d = self.ops[i].duties.get_mut(&cid).expect("checked");
                d.queue.push_back(Queued { env: f.env, replayed: true });
            }
        }
        self.pump(i, cid);
    }

    pub(super) fn on_confirm(&mut self, i: usize, c: Signed<Confirm>) {
        let cid = c.payload.cid;
        let Some(f) = self.ops[i].duties.get_mut(&cid).and_then(|d| d.flight.as_mut()) else { return };
        if f.h != c.payload.h || f.confirms.iter().any(|x| x.signer == c.signer) {
            return;
        }
        f.confirms.push(c);
        self.try_confirms(i, cid);
    }

    pub(super) fn prop_timer(&mut self, i: usize, cid: ContractId, h: Digest) {
        let Some(f) = self.ops[i].duties.get(&cid).and_then(|d| d.flight.as_ref()) else { return };
        if f.h != h || f.challenged {
            return;
        }
        let update = f.update.clone();
        if self.chain.state().record(cid).is_some_and(|r| r.watch_chal.block.is_some()) {
            let retry = self.now + self.sc.chain.max_interval();
            self.schedule(retry, super::sim::Ev::PropTimer { op: i, cid, h });
            return;
        }
        if self.submit_op(i, ManagerCall::ChallengeWatchdogs(update), Owner::WatchChallenge { op: i, cid, h }) {
            let f = self.ops[i].duties.get_mut(&cid).and_then(|d| d.flight.as_mut()).expect("checked");
            f.challenged = true;
        }
    }

    pub(super) fn executor_challenged(&mut self, cid: ContractId, env: ExecuteEnvelope) {
        let Some(exec) = self.chain.state().record(cid).and_then(|r| r.executor()) else { return };
        let i = self.by_enclave[&exec];
        if !self.onchain(i) {
            return;
        }
        let h = env.hash();
        let d = self.ops[i].duties.entry(cid).or_default();
        if let Some(res) = d.results.get(&h).cloned() {
            self.submit_op(i, ManagerCall::ExecutorResponse(res), Owner::Op);
            return;
        }
        d.owed.insert(h);
        if !(d.flight.as_ref().is_some_and(|f| f.h == h) || d.queue.iter().any(|q| q.env.hash() == h)) {
            // a challenged request goes ahead of everything else
            d.queue.push_front(Queued { env, replayed: false });
        }
        self.pump(i, cid);
    }

    pub(super) fn executor_kicked(&mut self, cid: ContractId, removed: PartyId) {
        self.emit_pool(cid);
        self.challenger.remove(&cid);
        if let Some(i) = self.op_of(&removed) {
            self.ops[i].duties.remove(&cid);
        }
        let crashed = self.chain.state().record(cid).is_some_and(|r| r.is_crashed());
        let open: Vec<usize> =
            (0..self.requests.len()).filter(|&r| self.requests[r].info.cid == cid && self.requests[r].info.outcome.is_none()).collect();
        if crashed {
            if let Some(c) = self.contract_of(cid) {
                self.contracts[c].phase = Phase::Dead;
            }
            for r in open {
                self.fail_request(r, "contract crashed".into());
            }
            return;
        }
        for r in open {
            self.send_request(r);
        }
    }

    // ---- watchdog ----

    pub(super) fn watchdog_update(&mut self, i: usize, m: Signed<Update>, onchain: bool) {
        let cid = m.payload.cid;
        match self.call(i, "update", cid, |e, now, b| e.handle_update(now, b, &m)) {
            Ok(conf) => {
                let me = self.me(i);
                self.emit(Event::Confirmed { cid, h: conf.payload.h.to_hex(), by: pid(&me) });
                if onchain {
                    self.submit_op(i, ManagerCall::WatchdogResponse(conf), Owner::Op);
                } else if let Some(j) = self.op_of(&m.signer) {
                    self.send(Node::Op(i), Node::Op(j), Body::Confirm(conf));
                }
            }
            Err(e) if lagging(&e) => self.park(i, Parked::Update { m, onchain }),
            Err(_) => {}
        }
    }

    pub(super) fn watchdogs_challenged(&mut self, cid: ContractId, pre: Signed<Update>) {
        let Some(rec) = self.chain.state().record(cid) else { return };
        let members: Vec<PartyId> = rec.pool_members().iter().skip(1).copied().collect();
        for p in members {
            let j = self.by_enclave[&p];
            if self.onchain(j) {
                self.watchdog_update(j, pre.clone(), true);
            }
        }
    }

    pub(super) fn onchain_confirm(&mut self, cid: ContractId, conf: Signed<Confirm>) {
        let Some(exec) = self.chain.state().record(cid).and_then(|r| r.executor()) else { return };
        let i = self.by_enclave[&exec];
        self.on_confirm(i, conf);
    }

    pub(super) fn watchdogs_kicked(&mut self, cid: ContractId, _height: Height) {
        // the executor retries once its mirror shows the smaller pool
        self.emit_pool(cid);
    }

    // ---- creation ----

    pub(super) fn creator_create(&mut self, i: usize, req: CreateRequest) {
        let cid = req.cid;
        if self.ops[i].creations.contains_key(&cid) {
            return;
        }
        match self.call(i, "create", cid, |e, now, b| e.handle_create(now, b, &req)) {
            Ok(Ok(ann)) => {
                let me = self.me(i);
                self.ops[i].creations.insert(cid, CreatorDuty { ann: Some(ann.clone()), confirms: vec![], done: false });
                for p in ann.payload.pool.clone() {
                    if p == me {
                        self.member_init(i, ann.clone(), false);
                    } else {
                        let j = self.by_enclave[&p];
                        self.send(Node::Op(i), Node::Op(j), Body::Init(ann.clone()));
                    }
                }
                let wait = self.timeouts.offchain_creation_propagation;
                self.schedule(self.now + wait, super::sim::Ev::InitTimer { op: i, cid });
            }
            Ok(Err(fail)) => {
                self.ops[i].creations.insert(cid, CreatorDuty { ann: None, confirms: vec![], done: true });
                self.submit_op(i, ManagerCall::CreationFailed(fail), Owner::Op);
            }
            Err(e) if lagging(&e) => self.park(i, Parked::Create(req)),
            Err(_) => {}
        }
    }

    pub(super) fn member_init(&mut self, i: usize, m: Signed<InitAnnouncement>, onchain: bool) {
        let cid = m.payload.cid;
        match self.call(i, "init", cid, |e, now, b| e.handle_init(now, b, &m)) {
            Ok(conf) => {
                if onchain {
                    self.submit_op(i, ManagerCall::CreationPoolResponse(conf), Owner::Op);
                } else if m.signer == self.me(i) {
                    self.on_init_confirm(i, conf);
                } else if let Some(j) = self.op_of(&m.signer) {
                    self.send(Node::Op(i), Node::Op(j), Body::InitConfirm(conf));
                }
            }
            Err(e) if lagging(&e) => self.park(i, Parked::Init { m, onchain }),
            Err(_) => {}
        }
    }

    pub(super) fn on_init_confirm(&mut self, i: usize, c: Signed<InitConfirm>) {
        let cid = c.payload.cid;
        let Some(d) = self.ops[i].creations.get_mut(&cid) else { return };
        if d.done || d.confirms.iter().any(|x| x.signer == c.signer) {
            return;
        }
        d.confirms.push(c);
        self.try_creation(i, cid);
    }

    fn try_creation(&mut self, i: usize, cid: ContractId) {
        let settled = self.ops[i].enclave.mirror().and_then(|m| m.record(cid)).and_then(|r| r.pool.clone());
        let Some(d) = self.ops[i].creations.get(&cid) else { return };
        let Some(ann) = &d.ann else { return };
        if d.done {
            return;
        }
        let covered = ann
            .payload
            .pool
            .iter()
            .filter(|p| settled.as_ref().is_none_or(|s| s.contains(p)))
            .all(|p| d.confirms.iter().any(|c| c.signer == *p));
        if !covered {
            return;
        }
        let confs = d.confirms.clone();
        if let Ok(stmt) = self.call(i, "creation_confirms", cid, |e, now, b| e.handle_creation_confirms(now, b, cid, &confs)) {
            self.ops[i].creations.get_mut(&cid).expect("checked").done = true;
            self.submit_op(i, ManagerCall::FinalizeCreation(stmt), Owner::Op);
        }
    }

    pub(super) fn init_timer(&mut self, i: usize, cid: ContractId) {
        let Some(d) = self.ops[i].creations.get(&cid) else { return };
        let Some(ann) = d.ann.clone() else { return };
        if d.done {
            return;
        }
        let creating = self.chain.state().record(cid).is_some_and(|r| r.creator.is_some() && r.watch_chal.block.is_none());
        if creating {
            self.submit_op(i, ManagerCall::ChallengeCreationPool(ann), Owner::Op);
        }
    }

    pub(super) fn creation_pool_challenged(&mut self, ann: Signed<InitAnnouncement>) {
        for p in ann.payload.pool.clone() {
            let j = self.by_enclave[&p];
            if self.onchain(j) {
                self.member_init(j, ann.clone(), true);
            }
        }
    }

    pub(super) fn onchain_init_confirm(&mut self, cid: ContractId, conf: Signed<InitConfirm>) {
        let Some(creator) = self.chain.state().record(cid).and_then(|r| r.creator) else { return };
        let i = self.by_enclave[&creator];
        self.on_init_confirm(i, conf);
    }

    pub(super) fn creation_pool_settled(&mut self, cid: ContractId, _height: Height) {
        self.emit_pool(cid);
    }

    pub(super) fn creator_challenged(&mut self, cid: ContractId, req: CreateRequest) {
        let Some(creator) = self.chain.state().record(cid).and_then(|r| r.creator) else { return };
        let i = self.by_enclave[&creator];
        if self.onchain(i) {
            self.creator_create(i, req);
        }
    }

    pub(super) fn creation_finalized(&mut self, cid: ContractId, pool: Vec<PartyId>, height: Height) {
        self.emit_pool(cid);
        let Some(c) = self.contract_of(cid) else { return };
        self.contracts[c].phase = Phase::Live;
        self.contracts[c].ready_at = height + self.sync.mirror_depth + 1;
        self.contracts[c].create_gen += 1;
        let action = self.contracts[c].action;
        self.resolve_action(action);
        let corrupt: Vec<_> = self
            .sc
            .adversaries
            .iter()
            .filter_map(|a| match a.target {
                Target::Pool { contract, position } if contract == c => Some((position, a.policy.clone())),
                _ => None,
            })
            .collect();
        for (position, policy) in corrupt {
            if let Some(p) = pool.get(position) {
                let i = self.by_enclave[p];
                self.corrupt(i, policy);
            }
        }
    }

    pub(super) fn creation_dead(&mut self, cid: ContractId) {
        let Some(c) = self.contract_of(cid) else { return };
        self.contracts[c].phase = Phase::Dead;
        self.contracts[c].create_gen += 1;
        self.emit(Event::CreationFailed { contract: c, cid });
        let action = self.contracts[c].action;
        self.resolve_action(action);
    }

    pub(super) fn create_timer(&mut self, c: usize, gen: u64) {
        let k = &self.contracts[c];
        if k.create_gen != gen || k.phase != Phase::Creating {
            return;
        }
        let Some(cid) = k.cid else { return };
        let Some(rec) = self.chain.state().record(cid) else { return };
        if rec.creator.is_none() {
            return;
        }
        if rec.exec_chal.block.is_some() {
            return;
        }
        let req = CreateRequest { cid, code: k.code.clone() };
        let sender = self.users[k.user].key.party();
        self.submit(ManagerCall::ChallengeCreator(req), sender, 0, Owner::CreatorChallenge(c));
    }

    // ---- users ----

    pub(super) fn resolve_action(&mut self, k: usize) {
        self.actions[k] = ActState::Resolved;
    }

    /// Whether action `k` may start now, following the ordering rules of the workload.
    fn can_start(&self, k: usize) -> bool {
        let a = &self.sc.workload[k];
        let serial = |x: &Action| matches!(x, Action::Create { .. } | Action::CreateUnknown { .. } | Action::Deposit { .. } | Action::Payout { .. });
        for j in 0..k {
            if self.actions[j] == ActState::Resolved {
                continue;
            }
            let b = &self.sc.workload[j];
            if serial(b) {
                return false;
            }
            if a.contract().is_some() && b.contract() == a.contract() && (b.user() == a.user() || serial(a)) {
                return false;
            }
        }
        match a.contract() {
            None => true,
            Some(c) => match self.contracts[c].phase {
                Phase::Dead => true,
                Phase::Live => self.tip() >= self.contracts[c].ready_at,
                Phase::Pending | Phase::Creating => false,
            },
        }
    }

    pub(super) fn poll_actions(&mut self) {
        loop {
            let next = (0..self.actions.len()).find(|&k| self.due[k] && self.actions[k] == ActState::Waiting && self.can_start(k));
            let Some(k) = next else { return };
            self.actions[k] = ActState::Running;
            self.start_action(k);
        }
    }

    fn start_action(&mut self, k: usize) {
        let a = self.sc.workload[k].clone();
        let u = a.user();
        let sender = self.users[u].key.party();
        if let Some(c) = a.contract() {
            if self.contracts[c].phase == Phase::Dead {
                self.note(format!("action {k} skipped: contract {c} is gone"));
                self.resolve_action(k);
                return;
            }
        }
        match a {
            Action::Create { .. } | Action::CreateUnknown { .. } => {
                let c = self.contracts.iter().position(|c| c.action == k).expect("one contract per create");
                self.contracts[c].phase = Phase::Creating;
                let creator = self.ops[self.contracts[c].creator].enclave.party();
                let code_hash = hash(&self.contracts[c].code);
                self.submit(ManagerCall::InitCreation { creator, code_hash }, sender, 0, Owner::Action(k));
            }
            Action::Deposit { contract, coins, .. } => {
                let cid = self.contracts[contract].cid.expect("live");
                let dep = self.ring.sign(&self.users[u].key, Deposit { cid, coins }).expect("user key is registered");
                self.submit(ManagerCall::Deposit(dep), sender, coins, Owner::Action(k));
            }
            Action::Payout { contract, .. } => match self.users[u].payouts.get(&contract).cloned() {
                Some(w) => self.submit(ManagerCall::Payout(w), sender, 0, Owner::Action(k)),
                None => {
                    self.note(format!("action {k} skipped: user {u} holds no withdrawal for contract {contract}"));
                    self.resolve_action(k);
                }
            },
            Action::Execute { contract, mv, .. } => self.start_execute(k, u, contract, mv),
        }
    }

    pub(super) fn action_included(&mut self, k: usize, receipt: &ManagerReceipt, height: Height) {
        match receipt {
            ManagerReceipt::Created(cid) => {
                let c = self.contracts.iter().position(|c| c.action == k).expect("one contract per create");
                self.contracts[c].cid = Some(*cid);
                self.emit(Event::Created { contract: c, cid: *cid });
                let k = &self.contracts[c];
                let (u, creator, gen) = (k.user, k.creator, k.create_gen);
                let req = CreateRequest { cid: *cid, code: k.code.clone() };
                self.send(Node::User(u), Node::Op(creator), Body::Create(req));
                let wait = self.timeouts.offchain_creation;
                self.schedule(self.now + wait, super::sim::Ev::CreateTimer { contract: c, gen });
            }
            ManagerReceipt::Deposited { cid, .. } | ManagerReceipt::PaidOut { cid, .. } => {
                if let Some(c) = self.contract_of(*cid) {
                    self.contracts[c].ready_at = self.contracts[c].ready_at.max(height + self.sync.mirror_depth + 1);
                }
                self.resolve_action(k);
            }
            _ => {}
        }
    }

    fn encode_move(&mut self, u: usize, mv: MoveSpec) -> Vec<u8> {
        match mv {
            MoveSpec::Increment => encode(&CounterMove::Increment),
            MoveSpec::Add(n) => encode(&CounterMove::Add(n)),
            MoveSpec::Spin(n) => encode(&CounterMove::Spin(n)),
            MoveSpec::Play(hand) => encode(&RpsMove::Play { hand, salt: self.users[u].rng.gen() }),
            MoveSpec::Release { to_user, coins } => {
                encode(&EscrowMove::Release { to: self.users[to_user].key.party(), coins })
            }
            MoveSpec::Refund => encode(&EscrowMove::Refund),
            MoveSpec::SortFixed => encode(&SortMove::Fixed),
            MoveSpec::SortShuffled => encode(&SortMove::Shuffled),
        }
    }

    /// Worst-case seconds until a request answers: every request queued ahead
    /// of it and every executor that may fail first costs one escalated round.
    fn liveness_bound(&self, queued: usize) -> u64 {
        let t = self.timeouts;
        let a = self.sc.chain.alpha;
        let exec = match t.dynamic {
            Some(d) => d.initial_execution + d.max_extensions as u64 * d.watchdog_challenge_extension.max(d.kick_extension),
            None => t.onchain_execution,
        };
        let round = t.effective_offchain_execution()
            + self.model.secs_for(2 * a + 2 + exec + self.sync.mirror_depth + 1)
            + self.sc.chain.max_interval();
        (queued as u64 + 1) * self.sc.pool_size as u64 * round
    }

    fn start_execute(&mut self, k: usize, u: usize, contract: usize, mv: MoveSpec) {
        let cid = self.contracts[contract].cid.expect("live");
        let plain = self.encode_move(u, mv);
        let rng = &mut self.users[u].rng;
        let keys = RequestKeys { move_key: SymKey::from_bytes(rng.gen()), result_key: SymKey::from_bytes(rng.gen()) };
        let nonce: [u8; 32] = rng.gen();
        let req = ExecuteRequest { cid, nonce, sealed_move: encrypt(&keys.move_key, &plain) };
        let signed = self.ring.sign(&self.users[u].key, req).expect("user key is registered");
        let h = request_hash(&signed);
        let queued = self.requests.iter().filter(|r| r.info.cid == cid && r.info.outcome.is_none()).count();
        let id = self.requests.len();
        let owner = pid(&self.users[u].key.party());
        self.emit(Event::Request { id, user: u, cid, h: h.to_hex(), bound: self.liveness_bound(queued) });
        for secret in [plain.clone(), keys.move_key.to_bytes().to_vec(), keys.result_key.to_bytes().to_vec()] {
            self.emit(Event::Secret { owner: owner.clone(), bytes: hex::encode(secret) });
        }
        self.requests.push(Request {
            info: RequestInfo { contract, cid, user: self.users[u].key.party(), mv: plain, h, outcome: None },
            user: u,
            action: k,
            signed,
            keys,
            sent_to: None,
            gen: 0,
        });
        self.send_request(id);
    }

    fn envelope_for(&self, r: usize, exec: PartyId) -> ExecuteEnvelope {
        let q = &self.requests[r];
        let keys = self.ring.encrypt_to(exec, &encode(&q.keys)).expect("executor is registered");
        ExecuteEnvelope { request: q.signed.clone(), keys }
    }

    /// (Re)sends request `r` to the contract's current executor and restarts its timer.
    fn send_request(&mut self, r: usize) {
        let cid = self.requests[r].info.cid;
        let Some(exec) = self.chain.state().record(cid).and_then(|x| x.executor()) else { return };
        let env = self.envelope_for(r, exec);
        let q = &mut self.requests[r];
        q.sent_to = Some(exec);
        q.gen += 1;
        let (u, gen) = (q.user, q.gen);
        let j = self.by_enclave[&exec];
        self.send(Node::User(u), Node::Op(j), Body::Execute(env));
        let wait = self.timeouts.effective_offchain_execution();
        self.schedule(self.now + wait, super::sim::Ev::UserTimer { req: r, gen });
    }

    pub(super) fn user_timer(&mut self, r: usize, gen: u64) {
        let q = &self.requests[r];
        if q.gen != gen || q.info.outcome.is_some() {
            return;
        }
        let cid = q.info.cid;
        let Some(rec) = self.chain.state().record(cid) else { return };
        if rec.is_crashed() {
            self.fail_request(r, "contract crashed".into());
            return;
        }
        let exec = rec.executor().expect("not crashed");
        if Some(exec) != q.sent_to {
            self.send_request(r);
            return;
        }
        if rec.exec_chal.block.is_some() {
            let retry = self.now + self.sc.chain.max_interval();
            self.schedule(retry, super::sim::Ev::UserTimer { req: r, gen });
            return;
        }
        let env = self.envelope_for(r, exec);
        let sender = self.users[q.user].key.party();
        self.submit(ManagerCall::ChallengeExecutor(env), sender, 0, Owner::Challenge(r));
    }

    fn fail_request(&mut self, r: usize, reason: String) {
        let q = &mut self.requests[r];
        if q.info.outcome.is_some() {
            return;
        }
        q.info.outcome = Some(Outcome::Failed(reason.clone()));
        q.gen += 1;
        let k = q.action;
        self.emit(Event::Failed { id: r, reason });
        self.resolve_action(k);
    }

    pub(super) fn user_result(&mut self, u: usize, res: &Signed<ExecutionResult>, via: Via) {
        let me = self.users[u].key.party();
        let Some(r) = self.requests.iter().position(|q| q.info.user == me && q.info.h == res.payload.h) else { return };
        if self.requests[r].info.outcome.is_some() {
            return;
        }
        let cid = self.requests[r].info.cid;
        let signer_in_pool = self.chain.state().record(cid).is_some_and(|x| x.pool_members().contains(&res.signer))
            || self.requests[r].sent_to == Some(res.signer);
        if !self.ring.verify(res).is_ok() || !signer_in_pool {
            self.note(format!("user {u} rejects a result for request {r}"));
            return;
        }
        let body: Option<ResultBody> =
            decrypt(&self.requests[r].keys.result_key, &res.payload.sealed).ok().and_then(|b| decode(&b).ok());
        let Some(body) = body else {
            self.note(format!("user {u} cannot open the result for request {r}"));
            return;
        };
        let c = self.requests[r].info.contract;
        let newer = self.users[u].payouts.get(&c).is_none_or(|w| w.payload.level <= body.payout.payload.level);
        if newer {
            self.users[u].payouts.insert(c, body.payout);
        }
        let q = &mut self.requests[r];
        q.info.outcome = Some(Outcome::Done(via));
        q.gen += 1;
        let k = q.action;
        self.emit(Event::Done { id: r, via });
        self.resolve_action(k);
    }
}
