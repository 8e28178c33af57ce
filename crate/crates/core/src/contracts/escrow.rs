use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AppState, ContractError, ContractLogic, MoveContext};
use crate::chain::Coins;
use crate::codec::{decode, encode};
use crate::crypto::PartyId;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowPublic {
    pub held: BTreeMap<PartyId, Coins>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EscrowMove {
    /// Pay `coins` of the sender's deposit to `to`.
    Release { to: PartyId, coins: Coins },
    /// Return everything the sender still holds here.
    Refund,
}

#[derive(Debug, Default)]
pub struct Escrow;

fn load(app: &AppState) -> EscrowPublic {
    decode(&app.public).expect("escrow state is always well formed")
}

impl ContractLogic for Escrow {
    fn name(&self) -> &'static str {
        "escrow"
    }

    fn code(&self) -> Vec<u8> {
        b"pose-contract/escrow/1".to_vec()
    }

    fn initial_state(&self) -> AppState {
        AppState { public: encode(&EscrowPublic::default()), private: vec![] }
    }

    fn on_deposit(&self, app: &mut AppState, from: PartyId, coins: Coins) {
        let mut s = load(app);
        *s.held.entry(from).or_default() += coins;
        app.public = encode(&s);
    }

    fn apply_move(&self, ctx: &mut MoveContext, app: &mut AppState, user: PartyId, mv: &[u8]) -> Result<(), ContractError> {
        let mv: EscrowMove = decode(mv).map_err(|e| ContractError::InvalidMove(e.to_string()))?;
        ctx.step(1)?;
        let mut s = load(app);
        let held = s.held.get(&user).copied().unwrap_or(0);
        let (to, coins) = match mv {
            EscrowMove::Release { to, coins } => (to, coins),
            EscrowMove::Refund => (user, held),
        };
        if coins > held {
            return Err(ContractError::InsufficientFunds);
        }
        ctx.pay(to, coins)?;
        if held == coins {
            s.held.remove(&user);
        } else {
            s.held.insert(user, held - coins);
        }
        app.public = encode(&s);
        Ok(())
    }
}
