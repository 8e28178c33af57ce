//! Canonical byte encoding shared by signatures, hashes and the manager call log.
//!
//! Fields are concatenated in declaration order; integers are fixed-width
//! little-endian, sequences and byte strings carry a `u64` length prefix and
//! enum variants a `u32` tag. Trailing bytes are rejected on decode.

use bincode::Options;
use serde::{de::DeserializeOwned, Serialize};

/// Upper bound on a single decoded value. Guards against hostile length prefixes.
const DECODE_LIMIT: u64 = 64 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
#[error("canonical decoding failed: {0}")]
pub struct CodecError(String);

fn options() -> impl Options {
    bincode::DefaultOptions::new()
        .with_fixint_encoding()
        .with_little_endian()
        .reject_trailing_bytes()
}

pub fn encode<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    options()
        .serialize(value)
        .expect("in-memory serialization of protocol types is infallible")
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    options()
        .with_limit(DECODE_LIMIT)
        .deserialize(bytes)
        .map_err(|e| CodecError(e.to_string()))
}
