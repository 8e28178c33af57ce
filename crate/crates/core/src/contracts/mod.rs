//! Contract host interface: `next_state`, `update_state`, `get_state`, the step
//! budget, coin-flow bookkeeping and the sample contracts.

pub mod counter;
pub mod escrow;
pub mod quicksort;
pub mod rps;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{Coins, Height};
use crate::codec::encode;
use crate::crypto::{hash, Digest, PartyId};
use crate::messages::{ContractId, ManagerCall, StepKind, Withdrawal};

pub const DEFAULT_BUDGET: u64 = 1_000_000;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppState {
    pub public: Vec<u8>,
    pub private: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractState {
    pub app: AppState,
    /// Hashes of executed requests, in execution order.
    pub received: Vec<Digest>,
    pub processed_height: Height,
    pub unspent: Vec<Withdrawal>,
    pub payout_level: u64,
    /// Coins deposited, as seen in processed final blocks.
    pub credited: Coins,
    /// Coins promised to users through withdrawals so far.
    pub issued: Coins,
}

impl ContractState {
    pub fn has_received(&self, h: &Digest) -> bool {
        self.received.contains(h)
    }
}

/// What `get_state(pub)` reveals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicView {
    pub public: Vec<u8>,
    pub processed_height: Height,
    pub unspent: Vec<Withdrawal>,
    pub payout_level: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateFlag {
    All,
    Public,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContractError {
    #[error("unknown contract code")]
    UnknownCode,
    #[error("step budget exceeded")]
    BudgetExceeded,
    #[error("insufficient funds")]
    InsufficientFunds,
    #[error("invalid move: {0}")]
    InvalidMove(String),
}

/// Accepted manager call as seen by an enclave, tagged with its block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedCall {
    pub height: Height,
    pub call: ManagerCall,
    pub value: Coins,
}

/// The relevant chain data an execution may consume: accepted calls up to `final_height`.
#[derive(Clone, Copy, Debug)]
pub struct ChainView<'a> {
    pub calls: &'a [LoggedCall],
    pub final_height: Height,
}

pub struct MoveContext {
    steps_left: u64,
    available: Coins,
    withdrawals: Vec<Withdrawal>,
    pub rng: ChaCha20Rng,
}

impl MoveContext {
    fn new(budget: u64, available: Coins, seed: Digest) -> Self {
        MoveContext { steps_left: budget, available, withdrawals: vec![], rng: ChaCha20Rng::from_seed(seed.0) }
    }

    pub fn step(&mut self, n: u64) -> Result<(), ContractError> {
        self.steps_left = self.steps_left.checked_sub(n).ok_or(ContractError::BudgetExceeded)?;
        Ok(())
    }

    pub fn pay(&mut self, to: PartyId, coins: Coins) -> Result<(), ContractError> {
        self.available = self.available.checked_sub(coins).ok_or(ContractError::InsufficientFunds)?;
        if coins > 0 {
            self.withdrawals.push(Withdrawal { coins, to });
        }
        Ok(())
    }
}

pub trait ContractLogic: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn code(&self) -> Vec<u8>;
    fn initial_state(&self) -> AppState;
    fn on_deposit(&self, _app: &mut AppState, _from: PartyId, _coins: Coins) {}
    fn apply_move(&self, ctx: &mut MoveContext, app: &mut AppState, user: PartyId, mv: &[u8]) -> Result<(), ContractError>;
}

#[derive(Clone, Debug)]
pub struct ContractInstance {
    pub cid: ContractId,
    pub code_id: Digest,
    pub budget: u64,
    logic: Arc<dyn ContractLogic>,
    state: ContractState,
}

impl ContractInstance {
    pub fn state(&self) -> &ContractState {
        &self.state
    }

    pub fn logic(&self) -> &dyn ContractLogic {
        self.logic.as_ref()
    }

    fn process_chain(&mut self, view: &ChainView<'_>) {
        let from = self.state.processed_height;
        if view.final_height <= from {
            return;
        }
        for c in view.calls.iter().filter(|c| c.height > from && c.height <= view.final_height) {
            match &c.call {
                ManagerCall::Deposit(m) if m.payload.cid == self.cid => {
                    self.state.credited += m.payload.coins;
                    self.logic.on_deposit(&mut self.state.app, m.signer, m.payload.coins);
                }
                ManagerCall::Payout(m) if m.payload.cid == self.cid && m.payload.level == self.state.payout_level => {
                    for w in &m.payload.withdrawals {
                        if let Some(i) = self.state.unspent.iter().position(|u| u == w) {
                            self.state.unspent.remove(i);
                        }
                    }
                    self.state.payout_level += 1;
                }
                _ => {}
            }
        }
        self.state.processed_height = view.final_height;
    }

    /// Processes new final chain data, then applies `mv` unless `h` was seen before.
    /// A failing move leaves the application state untouched but still records `h`.
    pub fn next_state(&mut self, user: PartyId, view: &ChainView<'_>, mv: &[u8], h: Digest, seed: Digest) -> StepKind {
        self.process_chain(view);
        if self.state.has_received(&h) {
            return StepKind::Dummy;
        }
        self.state.received.push(h);
        let mut ctx = MoveContext::new(self.budget, self.state.credited - self.state.issued, seed);
        let mut app = self.state.app.clone();
        match self.logic.apply_move(&mut ctx, &mut app, user, mv) {
            Ok(()) => {
                self.state.app = app;
                self.state.issued += ctx.withdrawals.iter().map(|w| w.coins).sum::<Coins>();
                self.state.unspent.extend(ctx.withdrawals);
                StepKind::Applied
            }
            Err(_) => StepKind::Reverted,
        }
    }

    /// Adopts `new` wholesale unless `h` was already executed here. Returns whether it did.
    pub fn update_state(&mut self, new: ContractState, h: Digest) -> bool {
        if self.state.has_received(&h) {
            return false;
        }
        self.state = new;
        true
    }

    pub fn get_state(&self, flag: StateFlag) -> Vec<u8> {
        match flag {
            StateFlag::All => encode(&self.state),
            StateFlag::Public => encode(&self.public_view()),
        }
    }

    pub fn public_view(&self) -> PublicView {
        PublicView {
            public: self.state.app.public.clone(),
            processed_height: self.state.processed_height,
            unspent: self.state.unspent.clone(),
            payout_level: self.state.payout_level,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractKind {
    Counter,
    Rps,
    Escrow,
    Quicksort,
}

impl ContractKind {
    pub fn logic(self) -> Arc<dyn ContractLogic> {
        match self {
            ContractKind::Counter => Arc::new(counter::Counter),
            ContractKind::Rps => Arc::new(rps::RockPaperScissors::default()),
            ContractKind::Escrow => Arc::new(escrow::Escrow),
            ContractKind::Quicksort => Arc::new(quicksort::Quicksort),
        }
    }

    pub fn code(self) -> Vec<u8> {
        self.logic().code()
    }
}

/// Contract code known to every enclave, keyed by code hash.
#[derive(Clone, Debug, Default)]
pub struct ContractRegistry {
    by_hash: BTreeMap<Digest, Arc<dyn ContractLogic>>,
    budget: u64,
}

impl ContractRegistry {
    pub fn standard() -> Self {
        let mut r = ContractRegistry { by_hash: BTreeMap::new(), budget: DEFAULT_BUDGET };
        for k in [ContractKind::Counter, ContractKind::Rps, ContractKind::Escrow, ContractKind::Quicksort] {
            r.add(k.logic());
        }
        r
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn add(&mut self, logic: Arc<dyn ContractLogic>) {
        self.by_hash.insert(hash(&logic.code()), logic);
    }

    pub fn init_contract(&self, cid: ContractId, code: &[u8], created_at: Height) -> Result<ContractInstance, ContractError> {
        let code_id = hash(code);
        let logic = self.by_hash.get(&code_id).ok_or(ContractError::UnknownCode)?.clone();
        let state = ContractState {
            app: logic.initial_state(),
            received: vec![],
            processed_height: created_at,
            unspent: vec![],
            payout_level: 0,
            credited: 0,
            issued: 0,
        };
        Ok(ContractInstance { cid, code_id, budget: self.budget, logic, state })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::decode;
    use crate::crypto::{KeyRing, PartyKind};
    use crate::messages::{Deposit, Withdraw};
    use counter::CounterMove;

    fn user(b: u8) -> PartyId {
        PartyId { kind: PartyKind::User, id: [b; 32] }
    }

    fn counter_value(c: &ContractInstance) -> u64 {
        decode(&c.state().app.public).unwrap()
    }

    const NO_CHAIN: ChainView<'static> = ChainView { calls: &[], final_height: 0 };

    #[test]
    fn init_states() {
        let reg = ContractRegistry::standard();
        let c = reg.init_contract(0, &ContractKind::Counter.code(), 7).unwrap();
        assert_eq!(counter_value(&c), 0);
        assert_eq!(c.state().processed_height, 7);
        assert!(c.state().received.is_empty());
        let r = reg.init_contract(0, &ContractKind::Rps.code(), 0).unwrap();
        let p: rps::RpsPublic = decode(&r.state().app.public).unwrap();
        assert_eq!(p.phase, rps::Phase::AwaitingBothMoves);
        assert_eq!(reg.init_contract(0, b"nothing", 0).unwrap_err(), ContractError::UnknownCode);
    }

    #[test]
    fn replayed_hash_is_a_dummy() {
        let reg = ContractRegistry::standard();
        let mut c = reg.init_contract(0, &ContractKind::Counter.code(), 0).unwrap();
        let mv = encode(&CounterMove::Increment);
        assert_eq!(c.next_state(user(1), &NO_CHAIN, &mv, hash(b"h1"), Digest::ZERO), StepKind::Applied);
        assert_eq!(c.next_state(user(1), &NO_CHAIN, &mv, hash(b"h1"), Digest::ZERO), StepKind::Dummy);
        assert_eq!(counter_value(&c), 1);
        assert_eq!(c.state().received, vec![hash(b"h1")]);
    }

    #[test]
    fn budget_overrun_reverts_but_records() {
        let reg = ContractRegistry::standard().with_budget(100);
        let mut c = reg.init_contract(0, &ContractKind::Counter.code(), 0).unwrap();
        c.next_state(user(1), &NO_CHAIN, &encode(&CounterMove::Increment), hash(b"a"), Digest::ZERO);
        let app_before = c.state().app.clone();
        let out = c.next_state(user(1), &NO_CHAIN, &encode(&CounterMove::Spin(1000)), hash(b"b"), Digest::ZERO);
        assert_eq!(out, StepKind::Reverted);
        assert_eq!(c.state().app, app_before);
        assert!(c.state().has_received(&hash(b"b")));
    }

    #[test]
    fn update_state_overwrites_or_is_dummy() {
        let reg = ContractRegistry::standard();
        let mut exec = reg.init_contract(0, &ContractKind::Counter.code(), 0).unwrap();
        let mut watch = exec.clone();
        exec.next_state(user(1), &NO_CHAIN, &encode(&CounterMove::Add(5)), hash(b"x"), Digest::ZERO);
        assert!(watch.update_state(exec.state().clone(), hash(b"x")));
        assert_eq!(watch.get_state(StateFlag::All), exec.get_state(StateFlag::All));
        // h already received: no-op even for a different snapshot
        let mut divergent = exec.state().clone();
        divergent.app.public = encode(&99u64);
        assert!(!watch.update_state(divergent.clone(), hash(b"x")));
        assert_eq!(counter_value(&watch), 5);
        // a divergent branch for a fresh h is adopted wholesale
        assert!(watch.update_state(divergent, hash(b"y")));
        assert_eq!(counter_value(&watch), 99);
    }

    #[test]
    fn chain_data_drives_coin_flow() {
        let ring = KeyRing::new(0);
        let u = ring.generate(PartyKind::User);
        let e = ring.generate(PartyKind::Enclave);
        let reg = ContractRegistry::standard();
        let mut c = reg.init_contract(3, &ContractKind::Escrow.code(), 1).unwrap();
        let dep = |cid, coins| ManagerCall::Deposit(ring.sign(&u, Deposit { cid, coins }).unwrap());
        let calls = vec![
            LoggedCall { height: 1, call: dep(3, 100), value: 100 },
            LoggedCall { height: 2, call: dep(3, 10), value: 10 },
            LoggedCall { height: 2, call: dep(4, 1000), value: 1000 },
            LoggedCall { height: 9, call: dep(3, 50), value: 50 },
        ];
        let view = ChainView { calls: &calls, final_height: 5 };
        let to = user(9);
        let mv = encode(&escrow::EscrowMove::Release { to, coins: 5 });
        assert_eq!(c.next_state(u.party(), &view, &mv, hash(b"r1"), Digest::ZERO), StepKind::Applied);
        assert_eq!(c.state().credited, 10);
        assert_eq!(c.state().processed_height, 5);
        assert_eq!(c.state().unspent, vec![Withdrawal { coins: 5, to }]);
        let too_much = encode(&escrow::EscrowMove::Release { to, coins: 6 });
        assert_eq!(c.next_state(u.party(), &view, &too_much, hash(b"r2"), Digest::ZERO), StepKind::Reverted);

        // the payout for level 0 lands in block 6 and becomes visible once final
        let payout = Withdraw { cid: 3, level: 0, withdrawals: vec![Withdrawal { coins: 5, to }] };
        let mut calls = calls;
        calls.push(LoggedCall { height: 6, call: ManagerCall::Payout(ring.sign(&e, payout).unwrap()), value: 0 });
        calls.sort_by_key(|c| c.height);
        let view = ChainView { calls: &calls, final_height: 9 };
        c.next_state(u.party(), &view, &encode(&escrow::EscrowMove::Refund), hash(b"r3"), Digest::ZERO);
        assert_eq!(c.state().payout_level, 1);
        assert_eq!(c.state().credited, 60);
        assert_eq!(c.state().unspent, vec![Withdrawal { coins: 55, to: u.party() }]);
    }

    #[test]
    fn public_projection() {
        let reg = ContractRegistry::standard();
        let c = reg.init_contract(0, &ContractKind::Counter.code(), 0).unwrap();
        let v: PublicView = decode(&c.get_state(StateFlag::Public)).unwrap();
        assert_eq!(v.public, c.state().app.public);
        assert!(c.state().app.private.is_empty());
    }

    #[test]
    fn same_seed_same_outcome() {
        let reg = ContractRegistry::standard();
        let mut a = reg.init_contract(0, &ContractKind::Quicksort.code(), 0).unwrap();
        let mut b = a.clone();
        let mv = encode(&quicksort::SortMove::Shuffled);
        a.next_state(user(1), &NO_CHAIN, &mv, hash(b"q"), hash(b"seed"));
        b.next_state(user(1), &NO_CHAIN, &mv, hash(b"q"), hash(b"seed"));
        assert_eq!(a.get_state(StateFlag::All), b.get_state(StateFlag::All));
        let mut c = reg.init_contract(0, &ContractKind::Quicksort.code(), 0).unwrap();
        c.next_state(user(1), &NO_CHAIN, &mv, hash(b"q"), hash(b"other"));
        assert_ne!(a.get_state(StateFlag::All), c.get_state(StateFlag::All));
    }
}
