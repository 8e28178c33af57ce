//! Stand-in cryptography: SHA-256 hashing is real, signatures and encryption are
//! keyed tags whose secrets live in a scenario-wide [`KeyRing`].
//!
//! The ring plays the role of the public-key infrastructure. Anyone can verify
//! against it, but producing a tag requires the [`SigningKey`] handed out at
//! generation time, so byzantine code paths that only hold messages cannot forge.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::codec::encode;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let bytes = hex::decode(s).ok()?;
        Some(Digest(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for PartyKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for PartyKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(PartyKind::User),
            1 => Ok(PartyKind::Operator),
            2 => Ok(PartyKind::Enclave),
            3 => Ok(PartyKind::Manager),
            4 => Ok(PartyKind::Platform),
            k => Err(serde::de::Error::custom(format!("unknown party kind {k}"))),
        }
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of the plain concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Hash of the canonical encoding of `value`.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> Digest {
    hash(&encode(value))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum PartyKind {
    User = 0,
    Operator = 1,
    Enclave = 2,
    Manager = 3,
    /// The hardware vendor key that signs attestation quotes.
    Platform = 4,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PartyId {
    pub kind: PartyKind,
    pub id: [u8; 32],
}

impl PartyId {
    /// Wire layout used inside the incremental transaction hash: kind byte then id.
    pub fn to_bytes(&self) -> [u8; 33] {
        let mut out = [0u8; 33];
        out[0] = self.kind as u8;
        out[1..].copy_from_slice(&self.id);
        out
    }
}

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            PartyKind::User => "U",
            PartyKind::Operator => "O",
            PartyKind::Enclave => "E",
            PartyKind::Manager => "M",
            PartyKind::Platform => "P",
        };
        write!(f, "{tag}:{}", hex::encode(&self.id[..4]))
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("signer {0} is not in the key table")]
    UnknownSigner(PartyId),
    #[error("no public key registered for {0}")]
    UnknownRecipient(PartyId),
    #[error("ciphertext was not produced under this key")]
    WrongKey,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Ok,
    Fail,
}

impl Verdict {
    pub fn is_ok(self) -> bool {
        self == Verdict::Ok
    }
}

/// Private half of a party's identity. Deliberately neither `Clone` nor serializable.
pub struct SigningKey {
    party: PartyId,
    secret: [u8; 32],
}

impl SigningKey {
    pub fn party(&self) -> PartyId {
        self.party
    }

    /// Key used to open envelopes addressed to this party.
    pub fn box_key(&self) -> SymKey {
        box_key_for(&self.secret)
    }

    /// Private pseudo-randomness bound to this identity.
    pub fn derive(&self, label: &[u8]) -> Digest {
        hash_parts(&[b"derive", &self.secret, label])
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningKey({:?})", self.party)
    }
}

fn box_key_for(secret: &[u8; 32]) -> SymKey {
    SymKey::from_bytes(hash_parts(&[b"box", secret]).0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signed<M> {
    pub payload: M,
    pub signer: PartyId,
    pub tag: Digest,
}

fn signature_tag<M: Serialize>(secret: &[u8; 32], payload: &M, signer: &PartyId) -> Digest {
    hash_parts(&[b"sig", secret, &encode(payload), &signer.to_bytes()])
}

/// Scenario-wide key table.
#[derive(Debug, Default)]
pub struct KeyRing {
    seed: [u8; 32],
    inner: RwLock<RingInner>,
}

#[derive(Debug, Default)]
struct RingInner {
    secrets: BTreeMap<PartyId, [u8; 32]>,
    issued: u64,
}

impl KeyRing {
    pub fn new(seed: u64) -> Self {
        KeyRing {
            seed: hash_parts(&[b"keyring", &seed.to_le_bytes()]).0,
            inner: RwLock::default(),
        }
    }

    /// Creates a fresh identity. Secrets are derived from the ring seed and an
    /// issue counter, so a scenario replays to the same identities.
    pub fn generate(&self, kind: PartyKind) -> SigningKey {
        let mut inner = self.inner.write().expect("key ring poisoned");
        let counter = inner.issued;
        inner.issued += 1;
        let secret = hash_parts(&[b"secret", &self.seed, &[kind as u8], &counter.to_le_bytes()]).0;
        let id = hash_parts(&[b"id", &secret]).0;
        let party = PartyId { kind, id };
        inner.secrets.insert(party, secret);
        SigningKey { party, secret }
    }

    pub fn contains(&self, party: &PartyId) -> bool {
        self.inner.read().expect("key ring poisoned").secrets.contains_key(party)
    }

    pub fn sign<M: Serialize>(&self, key: &SigningKey, payload: M) -> Result<Signed<M>, CryptoError> {
        let known = self.inner.read().expect("key ring poisoned").secrets.get(&key.party).copied();
        if known != Some(key.secret) {
            return Err(CryptoError::UnknownSigner(key.party));
        }
        let tag = signature_tag(&key.secret, &payload, &key.party);
        Ok(Signed { payload, signer: key.party, tag })
    }

    pub fn verify<M: Serialize>(&self, msg: &Signed<M>) -> Verdict {
        let inner = self.inner.read().expect("key ring poisoned");
        match inner.secrets.get(&msg.signer) {
            Some(secret) if signature_tag(secret, &msg.payload, &msg.signer) == msg.tag => Verdict::Ok,
            _ => Verdict::Fail,
        }
    }

    /// Public-key encryption to `recipient`.
    pub fn encrypt_to(&self, recipient: PartyId, plaintext: &[u8]) -> Result<Ciphertext, CryptoError> {
        let inner = self.inner.read().expect("key ring poisoned");
        let secret = inner.secrets.get(&recipient).ok_or(CryptoError::UnknownRecipient(recipient))?;
        let mut ct = encrypt(&box_key_for(secret), plaintext);
        ct.recipient = Some(recipient);
        Ok(ct)
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymKey {
    secret: [u8; 32],
}

impl SymKey {
    pub fn from_bytes(secret: [u8; 32]) -> Self {
        SymKey { secret }
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.secret
    }

    pub fn id(&self) -> Digest {
        hash_parts(&[b"keyid", &self.secret])
    }
}

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymKey({:?})", self.id())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    pub key_id: Digest,
    pub recipient: Option<PartyId>,
    pub nonce: [u8; 16],
    pub body: Vec<u8>,
    pub mac: Digest,
}

fn keystream_xor(key: &SymKey, nonce: &[u8; 16], data: &mut [u8]) {
    for (i, chunk) in data.chunks_mut(32).enumerate() {
        let block = hash_parts(&[b"ks", &key.secret, nonce, &(i as u64).to_le_bytes()]);
        for (b, k) in chunk.iter_mut().zip(block.0.iter()) {
            *b ^= k;
        }
    }
}

/// Deterministic authenticated encryption; the nonce is synthetic (derived from
/// key and plaintext) so equal inputs give equal ciphertexts.
pub fn encrypt(key: &SymKey, plaintext: &[u8]) -> Ciphertext {
    let siv = hash_parts(&[b"siv", &key.secret, plaintext]);
    let mut nonce = [0u8; 16];
    nonce.copy_from_slice(&siv.0[..16]);
    let mut body = plaintext.to_vec();
    keystream_xor(key, &nonce, &mut body);
    let mac = hash_parts(&[b"mac", &key.secret, &nonce, &body]);
    Ciphertext { key_id: key.id(), recipient: None, nonce, body, mac }
}

pub fn decrypt(key: &SymKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    if ct.key_id != key.id() || hash_parts(&[b"mac", &key.secret, &ct.nonce, &ct.body]) != ct.mac {
        return Err(CryptoError::WrongKey);
    }
    let mut body = ct.body.clone();
    keystream_xor(key, &ct.nonce, &mut body);
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sha256_empty_vector() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn sha256_abc_vector() {
        assert_eq!(
            hash(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn sign_and_verify_round_trip() {
        let ring = KeyRing::new(1);
        let u1 = ring.generate(PartyKind::User);
        let s = ring.sign(&u1, b"ping".to_vec()).unwrap();
        assert_eq!(ring.verify(&s), Verdict::Ok);
        assert_eq!(s, ring.sign(&u1, b"ping".to_vec()).unwrap());
    }

    #[test]
    fn tag_binds_signer_and_payload() {
        let ring = KeyRing::new(1);
        let u1 = ring.generate(PartyKind::User);
        let u2 = ring.generate(PartyKind::User);
        let s = ring.sign(&u1, b"ping".to_vec()).unwrap();
        let mut swapped = s.clone();
        swapped.signer = u2.party();
        assert_eq!(ring.verify(&swapped), Verdict::Fail);
        let mut tampered = s.clone();
        tampered.payload.push(0);
        assert_eq!(ring.verify(&tampered), Verdict::Fail);
        // a replayed but untouched message is still authentic
        assert_eq!(ring.verify(&s.clone()), Verdict::Ok);
    }

    #[test]
    fn foreign_key_is_unknown_signer() {
        let ring = KeyRing::new(1);
        let other = KeyRing::new(2);
        let k = other.generate(PartyKind::User);
        assert!(matches!(ring.sign(&k, 1u8), Err(CryptoError::UnknownSigner(_))));
    }

    #[test]
    fn rings_with_same_seed_issue_same_identities() {
        let a = KeyRing::new(9);
        let b = KeyRing::new(9);
        for kind in [PartyKind::User, PartyKind::Enclave, PartyKind::Operator] {
            assert_eq!(a.generate(kind).party(), b.generate(kind).party());
        }
    }

    #[test]
    fn symmetric_wrong_key() {
        let k = SymKey::from_bytes([1; 32]);
        let k2 = SymKey::from_bytes([2; 32]);
        let ct = encrypt(&k, b"secret move");
        assert_eq!(decrypt(&k, &ct).unwrap(), b"secret move");
        assert_eq!(decrypt(&k2, &ct), Err(CryptoError::WrongKey));
        let mut forged = ct.clone();
        forged.key_id = k2.id();
        assert_eq!(decrypt(&k2, &forged), Err(CryptoError::WrongKey));
    }

    #[test]
    fn envelope_opens_only_for_recipient() {
        let ring = KeyRing::new(3);
        let e1 = ring.generate(PartyKind::Enclave);
        let e2 = ring.generate(PartyKind::Enclave);
        let ct = ring.encrypt_to(e1.party(), b"pool key").unwrap();
        assert_eq!(ct.recipient, Some(e1.party()));
        assert_eq!(decrypt(&e1.box_key(), &ct).unwrap(), b"pool key");
        assert_eq!(decrypt(&e2.box_key(), &ct), Err(CryptoError::WrongKey));
    }

    #[test]
    fn party_kind_round_trips() {
        for kind in [PartyKind::User, PartyKind::Operator, PartyKind::Enclave, PartyKind::Manager, PartyKind::Platform] {
            let p = PartyId { kind, id: [7; 32] };
            assert_eq!(crate::codec::decode::<PartyId>(&encode(&p)).unwrap(), p);
        }
    }

    proptest! {
        #[test]
        fn extension_changes_hash(x in proptest::collection::vec(any::<u8>(), 0..256)) {
            let mut y = x.clone();
            y.push(b'a');
            prop_assert_ne!(hash(&x), hash(&y));
        }

        #[test]
        fn encryption_round_trips(key in any::<[u8; 32]>(), pt in proptest::collection::vec(any::<u8>(), 0..300)) {
            let k = SymKey::from_bytes(key);
            prop_assert_eq!(decrypt(&k, &encrypt(&k, &pt)).unwrap(), pt);
        }

        #[test]
        fn ciphertext_hides_long_plaintexts(key in any::<[u8; 32]>(), pt in proptest::collection::vec(any::<u8>(), 24..64)) {
            let ct = encrypt(&SymKey::from_bytes(key), &pt);
            prop_assert!(!ct.body.windows(pt.len()).any(|w| w == pt.as_slice()));
        }
    }
}
