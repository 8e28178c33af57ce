//! Two-player rock-paper-scissors. Moves stay in the private partition until
//! both players have played; the winner is paid both stakes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AppState, ContractError, ContractLogic, MoveContext};
use crate::chain::Coins;
use crate::codec::{decode, encode};
use crate::crypto::PartyId;

pub const DEFAULT_STAKE: Coins = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Rock,
    Paper,
    Scissors,
}

impl Hand {
    pub fn beats(self, other: Hand) -> bool {
        matches!((self, other), (Hand::Rock, Hand::Scissors) | (Hand::Paper, Hand::Rock) | (Hand::Scissors, Hand::Paper))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RpsMove {
    Play { hand: Hand, salt: [u8; 16] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    AwaitingBothMoves,
    AwaitingOneMove,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub players: [PartyId; 2],
    pub hands: [Hand; 2],
    pub winner: Option<PartyId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpsPublic {
    pub phase: Phase,
    pub stake: Coins,
    pub balances: BTreeMap<PartyId, Coins>,
    /// Players who have moved in the current round.
    pub committed: Vec<PartyId>,
    pub rounds: Vec<Round>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpsPrivate {
    /// Raw move bytes of the current round.
    pub moves: Vec<(PartyId, Vec<u8>)>,
}

#[derive(Debug)]
pub struct RockPaperScissors {
    pub stake: Coins,
}

impl Default for RockPaperScissors {
    fn default() -> Self {
        RockPaperScissors { stake: DEFAULT_STAKE }
    }
}

fn bad(e: impl ToString) -> ContractError {
    ContractError::InvalidMove(e.to_string())
}

impl ContractLogic for RockPaperScissors {
    fn name(&self) -> &'static str {
        "rock-paper-scissors"
    }

    fn code(&self) -> Vec<u8> {
        format!("pose-contract/rock-paper-scissors/1/stake={}", self.stake).into_bytes()
    }

    fn initial_state(&self) -> AppState {
        let public = RpsPublic {
            phase: Phase::AwaitingBothMoves,
            stake: self.stake,
            balances: BTreeMap::new(),
            committed: vec![],
            rounds: vec![],
        };
        AppState { public: encode(&public), private: encode(&RpsPrivate::default()) }
    }

    fn on_deposit(&self, app: &mut AppState, from: PartyId, coins: Coins) {
        let mut p: RpsPublic = decode(&app.public).expect("rps state is always well formed");
        *p.balances.entry(from).or_default() += coins;
        app.public = encode(&p);
    }

    fn apply_move(&self, ctx: &mut MoveContext, app: &mut AppState, user: PartyId, mv: &[u8]) -> Result<(), ContractError> {
        ctx.step(1)?;
        let RpsMove::Play { .. } = decode::<RpsMove>(mv).map_err(bad)?;
        let mut p: RpsPublic = decode(&app.public).map_err(bad)?;
        let mut s: RpsPrivate = decode(&app.private).map_err(bad)?;
        if p.committed.contains(&user) {
            return Err(bad("already moved this round"));
        }
        let balance = p.balances.get(&user).copied().unwrap_or(0);
        if balance < p.stake {
            return Err(ContractError::InsufficientFunds);
        }
        p.balances.insert(user, balance - p.stake);
        p.committed.push(user);
        s.moves.push((user, mv.to_vec()));
        p.phase = Phase::AwaitingOneMove;
        if s.moves.len() == 2 {
            let hand = |raw: &[u8]| match decode::<RpsMove>(raw) {
                Ok(RpsMove::Play { hand, .. }) => hand,
                Err(_) => unreachable!("validated on entry"),
            };
            let (a, b) = (s.moves[0].0, s.moves[1].0);
            let (ha, hb) = (hand(&s.moves[0].1), hand(&s.moves[1].1));
            let winner = if ha.beats(hb) {
                Some(a)
            } else if hb.beats(ha) {
                Some(b)
            } else {
                None
            };
            match winner {
                Some(w) => ctx.pay(w, 2 * p.stake)?,
                None => {
                    ctx.pay(a, p.stake)?;
                    ctx.pay(b, p.stake)?;
                }
            }
            p.rounds.push(Round { players: [a, b], hands: [ha, hb], winner });
            p.committed.clear();
            s.moves.clear();
            p.phase = Phase::AwaitingBothMoves;
        }
        app.public = encode(&p);
        app.private = encode(&s);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::{ChainView, ContractKind, ContractRegistry, LoggedCall, StateFlag};
    use crate::crypto::{hash, Digest, KeyRing, PartyKind};
    use crate::messages::{Deposit, ManagerCall, StepKind, Withdrawal};

    #[test]
    fn hands() {
        assert!(Hand::Rock.beats(Hand::Scissors));
        assert!(!Hand::Rock.beats(Hand::Paper));
        assert!(!Hand::Rock.beats(Hand::Rock));
    }

    #[test]
    fn full_round_hides_moves_until_complete() {
        let ring = KeyRing::new(1);
        let (u1, u2) = (ring.generate(PartyKind::User), ring.generate(PartyKind::User));
        let calls: Vec<_> = [&u1, &u2]
            .iter()
            .map(|u| LoggedCall { height: 1, call: ManagerCall::Deposit(ring.sign(u, Deposit { cid: 0, coins: 5 }).unwrap()), value: 5 })
            .collect();
        let view = ChainView { calls: &calls, final_height: 1 };
        let mut c = ContractRegistry::standard().init_contract(0, &ContractKind::Rps.code(), 0).unwrap();
        let m1 = encode(&RpsMove::Play { hand: Hand::Rock, salt: [0xa1; 16] });
        let m2 = encode(&RpsMove::Play { hand: Hand::Scissors, salt: [0xb2; 16] });
        assert_eq!(c.next_state(u1.party(), &view, &m1, hash(b"1"), Digest::ZERO), StepKind::Applied);

        let public = c.get_state(StateFlag::Public);
        assert!(!public.windows(m1.len()).any(|w| w == m1.as_slice()));
        assert!(c.get_state(StateFlag::All).windows(m1.len()).any(|w| w == m1.as_slice()));
        let p: RpsPublic = decode(&c.state().app.public).unwrap();
        assert_eq!(p.phase, Phase::AwaitingOneMove);

        assert_eq!(c.next_state(u2.party(), &view, &m2, hash(b"2"), Digest::ZERO), StepKind::Applied);
        assert_eq!(c.state().unspent, vec![Withdrawal { coins: 10, to: u1.party() }]);
        let p: RpsPublic = decode(&c.state().app.public).unwrap();
        assert_eq!(p.rounds[0].winner, Some(u1.party()));
        assert!(decode::<RpsPrivate>(&c.state().app.private).unwrap().moves.is_empty());
        // no stake left for another round
        let m3 = encode(&RpsMove::Play { hand: Hand::Paper, salt: [0; 16] });
        assert_eq!(c.next_state(u2.party(), &view, &m3, hash(b"3"), Digest::ZERO), StepKind::Reverted);
    }
}
