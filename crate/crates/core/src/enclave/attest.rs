//! Simulated remote attestation: a platform key vouches that an enclave runs
//! the canonical program.

use crate::crypto::{hash, Digest, KeyRing, PartyId, SigningKey};
use crate::messages::{AttestationQuote, QuoteBody};

pub const PROGRAM_ID: &[u8] = b"pose-program/1";

pub fn program_digest() -> Digest {
    hash(PROGRAM_ID)
}

/// The TEE vendor's signing authority.
#[derive(Debug)]
pub struct Platform {
    key: SigningKey,
}

impl Platform {
    pub fn new(key: SigningKey) -> Self {
        Platform { key }
    }

    pub fn party(&self) -> PartyId {
        self.key.party()
    }

    pub fn quote(&self, ring: &KeyRing, enclave: PartyId, program: Digest) -> AttestationQuote {
        ring.sign(&self.key, QuoteBody { enclave, program_digest: program }).expect("platform key is registered")
    }
}

pub fn verify_quote(ring: &KeyRing, platform: PartyId, quote: &AttestationQuote, expected: Digest) -> bool {
    ring.verify(quote).is_ok() && quote.signer == platform && quote.payload.program_digest == expected
}
