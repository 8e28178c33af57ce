//! Pure compute: sorts 2048 pseudo-random integers, one step per comparison.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AppState, ContractError, ContractLogic, MoveContext};
use crate::codec::{decode, encode};
use crate::crypto::{digest_of, Digest, PartyId};

pub const INPUT_LEN: usize = 2048;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortPublic {
    pub runs: u64,
    pub last_digest: Digest,
    pub last_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SortMove {
    /// Sort the fixed input array.
    Fixed,
    /// Sort an array drawn from the contract's per-request randomness.
    Shuffled,
}

#[derive(Debug, Default)]
pub struct Quicksort;

pub fn fixed_input() -> Vec<u32> {
    // xorshift32, so the array is hard-coded without spelling out 2048 literals
    let mut x = 0x2545_f491u32;
    (0..INPUT_LEN)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 17;
            x ^= x << 5;
            x
        })
        .collect()
}

fn partition(v: &mut [u32], ctx: &mut MoveContext) -> Result<usize, ContractError> {
    // pivot must not be the last element or the split can come back empty
    let pivot = v[(v.len() - 1) / 2];
    let (mut i, mut j) = (0usize, v.len() - 1);
    loop {
        while { ctx.step(1)?; v[i] < pivot } {
            i += 1;
        }
        while { ctx.step(1)?; v[j] > pivot } {
            j -= 1;
        }
        if i >= j {
            return Ok(j);
        }
        v.swap(i, j);
        i += 1;
        j -= 1;
    }
}

fn sort(v: &mut [u32], ctx: &mut MoveContext) -> Result<(), ContractError> {
    if v.len() <= 1 {
        return Ok(());
    }
    let p = partition(v, ctx)?;
    let (lo, hi) = v.split_at_mut(p + 1);
    sort(lo, ctx)?;
    sort(hi, ctx)
}

impl ContractLogic for Quicksort {
    fn name(&self) -> &'static str {
        "quicksort"
    }

    fn code(&self) -> Vec<u8> {
        b"pose-contract/quicksort-2048/1".to_vec()
    }

    fn initial_state(&self) -> AppState {
        AppState { public: encode(&SortPublic::default()), private: vec![] }
    }

    fn apply_move(&self, ctx: &mut MoveContext, app: &mut AppState, _user: PartyId, mv: &[u8]) -> Result<(), ContractError> {
        let mv: SortMove = decode(mv).map_err(|e| ContractError::InvalidMove(e.to_string()))?;
        let mut v = match mv {
            SortMove::Fixed => fixed_input(),
            SortMove::Shuffled => (0..INPUT_LEN).map(|_| ctx.rng.gen()).collect(),
        };
        let before = ctx.steps_left;
        sort(&mut v, ctx)?;
        let mut s: SortPublic = decode(&app.public).map_err(|e| ContractError::InvalidMove(e.to_string()))?;
        s.runs += 1;
        s.last_digest = digest_of(&v);
        s.last_steps = before - ctx.steps_left;
        app.public = encode(&s);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::{ContractKind, ContractRegistry};
    use crate::crypto::{hash, PartyKind};
    use crate::messages::StepKind;
    use crate::contracts::ChainView;

    #[test]
    fn sorts_correctly() {
        let mut ctx = MoveContext::new(u64::MAX, 0, Digest::ZERO);
        let mut v = fixed_input();
        let mut expected = v.clone();
        expected.sort_unstable();
        sort(&mut v, &mut ctx).unwrap();
        assert_eq!(v, expected);
    }

    proptest::proptest! {
        #[test]
        fn sorts_any_input(mut v in proptest::collection::vec(0u32..8, 0..64)) {
            let mut ctx = MoveContext::new(u64::MAX, 0, Digest::ZERO);
            let mut expected = v.clone();
            expected.sort_unstable();
            sort(&mut v, &mut ctx).unwrap();
            proptest::prop_assert_eq!(v, expected);
        }
    }

    #[test]
    fn budget_boundary() {
        let user = PartyId { kind: PartyKind::User, id: [0; 32] };
        let view = ChainView { calls: &[], final_height: 0 };
        let reg = ContractRegistry::standard();
        let mut c = reg.init_contract(0, &ContractKind::Quicksort.code(), 0).unwrap();
        c.next_state(user, &view, &encode(&SortMove::Fixed), hash(b"1"), Digest::ZERO);
        let s: SortPublic = decode(&c.state().app.public).unwrap();
        assert_eq!(s.runs, 1);
        assert_eq!(s.last_digest, digest_of(&{
            let mut v = fixed_input();
            v.sort_unstable();
            v
        }));

        let exact = ContractRegistry::standard().with_budget(s.last_steps);
        let mut ok = exact.init_contract(0, &ContractKind::Quicksort.code(), 0).unwrap();
        assert_eq!(ok.next_state(user, &view, &encode(&SortMove::Fixed), hash(b"1"), Digest::ZERO), StepKind::Applied);
        let short = ContractRegistry::standard().with_budget(s.last_steps - 1);
        let mut fail = short.init_contract(0, &ContractKind::Quicksort.code(), 0).unwrap();
        assert_eq!(fail.next_state(user, &view, &encode(&SortMove::Fixed), hash(b"1"), Digest::ZERO), StepKind::Reverted);
    }
}
