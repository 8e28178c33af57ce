use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{DomainError, LivenessQuery, Scalar};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Trials per independently seeded stream; fixed so results do not depend
/// on the thread count.
const CHUNK: u64 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CrashEstimate {
    pub trials: u64,
    pub crashes: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl CrashEstimate {
    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval<T: Scalar>(k: u64, n: u64, z: T) -> (T, T) {
    let nf = T::from_u64(n).expect("trial counts fit");
    let p = T::from_u64(k).expect("trial counts fit") / nf;
    let two = T::one() + T::one();
    let z2 = z * z;
    let denom = T::one() + z2 / nf;
    let center = (p + z2 / (two * nf)) / denom;
    let half = z / denom * (p * (T::one() - p) / nf + z2 / (two * two * nf * nf)).sqrt();
    ((center - half).max(T::zero()), (center + half).min(T::one()))
}

/// One pool draw without replacement; stops at the first honest member.
fn all_byzantine(rng: &mut ChaCha8Rng, n: u64, m: u64, s: u64) -> bool {
    for i in 0..s {
        if rng.gen_range(0..n - i) >= m - i {
            return false;
        }
    }
    true
}

pub fn monte_carlo_crash(q: &LivenessQuery, trials: u64, seed: u64) -> Result<CrashEstimate, DomainError> {
    q.validate()?;
    if trials == 0 {
        return Err(DomainError::NoTrials);
    }
    let (n, m, s) = (q.n, q.m, q.s);
    let crashes = if s > m {
        0
    } else {
        (0..trials.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c);
                let len = CHUNK.min(trials - c * CHUNK);
                (0..len).filter(|_| all_byzantine(&mut rng, n, m, s)).count() as u64
            })
            .sum()
    };
    let (lo, hi) = wilson_interval(crashes, trials, Z95);
    Ok(CrashEstimate { trials, crashes, estimate: crashes as f64 / trials as f64, lo, hi })
}
