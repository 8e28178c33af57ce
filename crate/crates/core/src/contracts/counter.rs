use serde::{Deserialize, Serialize};

use super::{AppState, ContractError, ContractLogic, MoveContext};
use crate::codec::{decode, encode};
use crate::crypto::PartyId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CounterMove {
    Increment,
    Add(u64),
    /// Burns `n` steps, then increments.
    Spin(u64),
}

#[derive(Debug, Default)]
pub struct Counter;

impl ContractLogic for Counter {
    fn name(&self) -> &'static str {
        "counter"
    }

    fn code(&self) -> Vec<u8> {
        b"pose-contract/counter/1".to_vec()
    }

    fn initial_state(&self) -> AppState {
        AppState { public: encode(&0u64), private: vec![] }
    }

    fn apply_move(&self, ctx: &mut MoveContext, app: &mut AppState, _user: PartyId, mv: &[u8]) -> Result<(), ContractError> {
        let mv: CounterMove = decode(mv).map_err(|e| ContractError::InvalidMove(e.to_string()))?;
        let value: u64 = decode(&app.public).map_err(|e| ContractError::InvalidMove(e.to_string()))?;
        ctx.step(1)?;
        let next = match mv {
            CounterMove::Increment => value.wrapping_add(1),
            CounterMove::Add(n) => value.wrapping_add(n),
            CounterMove::Spin(n) => {
                for _ in 0..n {
                    ctx.step(1)?;
                }
                value.wrapping_add(1)
            }
        };
        app.public = encode(&next);
        Ok(())
    }
}
