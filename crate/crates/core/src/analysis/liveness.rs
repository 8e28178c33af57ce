use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};

use super::{DomainError, LivenessQuery, Scalar};
use crate::ExactProbability;

/// Probability that a uniformly drawn pool holds only byzantine enclaves,
/// as the exact product of (m - i) / (n - i) for i < s.
pub fn crash_probability_exact(q: &LivenessQuery) -> Result<ExactProbability, DomainError> {
    q.validate()?;
    if q.s > q.m {
        return Ok(ExactProbability::zero());
    }
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for i in 0..q.s {
        num *= q.m - i;
        den *= q.n - i;
    }
    Ok(ExactProbability::new(num, den))
}

pub fn liveness_epsilon_exact(q: &LivenessQuery) -> Result<ExactProbability, DomainError> {
    Ok(ExactProbability::one() - crash_probability_exact(q)?)
}

fn to_scalar<T: Scalar>(p: &ExactProbability) -> T {
    // the ratio conversion keeps full precision even for tiny values
    T::from_f64(p.to_f64().expect("probabilities are finite")).expect("probabilities fit every float type")
}

pub fn crash_probability<T: Scalar>(q: &LivenessQuery) -> Result<T, DomainError> {
    Ok(to_scalar(&crash_probability_exact(q)?))
}

pub fn liveness_epsilon<T: Scalar>(q: &LivenessQuery) -> Result<T, DomainError> {
    Ok(to_scalar(&liveness_epsilon_exact(q)?))
}

/// Probability that none of `k` independently pooled contracts crashes,
/// (1 - c)^k evaluated as exp(k * ln(1 - c)).
///
/// The crash probability c is rounded once from its exact value; after that
/// `ln_1p` and `exp` each add an error of a few ulp relative to the exponent,
/// so the result carries a relative error of about k * c * 2^-52 on top.
pub fn system_no_crash_prob<T: Scalar>(q: &LivenessQuery, k: u64) -> Result<T, DomainError> {
    let c: T = crash_probability(q)?;
    if k == 0 || c.is_zero() {
        return Ok(T::one());
    }
    if c == T::one() {
        return Ok(T::zero());
    }
    let k = T::from_u64(k).expect("contract counts fit every float type");
    Ok((k * (-c).ln_1p()).exp())
}
