//! Deterministic cryptographic primitives.
//!
//! * [`Digest`]: SHA-256 output, the hash used everywhere in the protocol.
//! * RSA-style blind signatures (Chaum's construction) over digests mapped to
//!   integers by big-endian interpretation reduced mod `n`. There is no
//!   full-domain-hash padding; this is a toy threat model.
//! * [`OwnerKey`]: Ed25519 keys that authenticate asset transfer records,
//!   validator acknowledgements and bank identities.
//!
//! Big integers serialize as lowercase hex strings and digests as 64-char hex.

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signer, Verifier};
use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::rng::SeededStream;

pub const DIGEST_LEN: usize = 32;

/// Public exponent used for every generated key.
pub const PUBLIC_EXPONENT: u32 = 65_537;

/// Supported modulus sizes. 512 is the test ("toy") profile and 2048 the
/// realistic profile.
pub const SUPPORTED_KEY_BITS: [u32; 3] = [512, 1024, 2048];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("unsupported key size: {0} bits")]
    UnsupportedBitSize(u32),
    #[error("blinding factor is not coprime to the modulus")]
    NotCoprime,
    #[error("value out of range for the modulus")]
    OutOfRange,
    #[error("invalid key material: {0}")]
    InvalidKey(String),
}

impl CryptoError {
    pub fn code(&self) -> &'static str {
        match self {
            CryptoError::UnsupportedBitSize(_) => "UnsupportedBitSize",
            CryptoError::NotCoprime => "NotCoprime",
            CryptoError::OutOfRange => "OutOfRange",
            CryptoError::InvalidKey(_) => "InvalidKey",
        }
    }
}

// ---------------------------------------------------------------------------
// Digest
// ---------------------------------------------------------------------------

/// A 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Digest(#[serde(with = "crate::codec::bytes_hex")] pub [u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub fn of(data: &[u8]) -> Self {
        Digest(Sha256::digest(data).into())
    }

    pub fn builder() -> DigestBuilder {
        DigestBuilder(Sha256::new())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(text: &str) -> Option<Self> {
        let mut out = [0u8; DIGEST_LEN];
        hex::decode_to_slice(text, &mut out).ok()?;
        Some(Digest(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Incremental hasher with unambiguous field framing helpers.
pub struct DigestBuilder(Sha256);

impl DigestBuilder {
    /// Raw bytes, no framing. Use only for fixed-width fields.
    pub fn fixed(mut self, bytes: &[u8]) -> Self {
        self.0.update(bytes);
        self
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0.update(v.to_be_bytes());
        self
    }

    /// Length-prefixed variable-width field.
    pub fn field(mut self, bytes: &[u8]) -> Self {
        self.0.update((bytes.len() as u64).to_be_bytes());
        self.0.update(bytes);
        self
    }

    pub fn finish(self) -> Digest {
        Digest(self.0.finalize().into())
    }
}

// ---------------------------------------------------------------------------
// RSA blind signatures
// ---------------------------------------------------------------------------

/// Public part of a signing key: modulus and public exponent.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsaPublic {
    #[serde(with = "crate::codec::biguint_hex")]
    pub modulus: BigUint,
    #[serde(with = "crate::codec::biguint_hex")]
    pub exponent: BigUint,
}

impl fmt::Debug for RsaPublic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RsaPublic({} bits, e={})", self.modulus.bits(), self.exponent)
    }
}

/// Secret part of a signing key. Carries the modulus so it can sign alone.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsaSecret {
    #[serde(with = "crate::codec::biguint_hex")]
    pub modulus: BigUint,
    #[serde(with = "crate::codec::biguint_hex")]
    pub exponent: BigUint,
}

impl fmt::Debug for RsaSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RsaSecret(..)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigningKeyPair {
    pub public: RsaPublic,
    pub secret: RsaSecret,
    pub bits: u32,
}

impl SigningKeyPair {
    /// Builds a key from explicit primes. Used for hand-checkable toy keys;
    /// no size profile is enforced.
    pub fn from_primes(p: &BigUint, q: &BigUint, e: &BigUint) -> Result<Self, CryptoError> {
        if p == q {
            return Err(CryptoError::InvalidKey("p == q".into()));
        }
        let one = BigUint::one();
        let n = p * q;
        let totient = (p - &one) * (q - &one);
        let d = e
            .modinv(&totient)
            .ok_or_else(|| CryptoError::InvalidKey("e not invertible mod totient".into()))?;
        Ok(SigningKeyPair {
            bits: n.bits() as u32,
            public: RsaPublic {
                modulus: n.clone(),
                exponent: e.clone(),
            },
            secret: RsaSecret {
                modulus: n,
                exponent: d,
            },
        })
    }
}

/// Generates an RSA key whose modulus has exactly `bits` bits.
pub fn generate_keypair(bits: u32, rng: &mut SeededStream) -> Result<SigningKeyPair, CryptoError> {
    if !SUPPORTED_KEY_BITS.contains(&bits) {
        return Err(CryptoError::UnsupportedBitSize(bits));
    }
    let e = BigUint::from(PUBLIC_EXPONENT);
    let half = (bits / 2) as usize;
    loop {
        let p = glass_pumpkin::prime::from_rng(half, rng)
            .map_err(|err| CryptoError::InvalidKey(err.to_string()))?;
        let q = glass_pumpkin::prime::from_rng(half, rng)
            .map_err(|err| CryptoError::InvalidKey(err.to_string()))?;
        if p == q || (&p * &q).bits() != bits as u64 {
            continue;
        }
        let one = BigUint::one();
        if ((&p - &one) * (&q - &one)).gcd(&e) != one {
            continue;
        }
        return SigningKeyPair::from_primes(&p, &q, &e);
    }
}

/// The blinding factor `r`. Lives only inside the wallet that drew it.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindingFactor {
    #[serde(with = "crate::codec::biguint_hex")]
    pub value: BigUint,
    pub stream_id: String,
    pub draw_index: u64,
}

impl fmt::Debug for BlindingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BlindingFactor({}@{})", self.stream_id, self.draw_index)
    }
}

impl BlindingFactor {
    /// Draws a fresh factor uniformly from `[2, n-1]` coprime to `n`.
    pub fn draw(rng: &mut SeededStream, pk: &RsaPublic) -> Self {
        let low = BigUint::from(2u32);
        loop {
            let draw_index = rng.position();
            let value = rng.gen_biguint_range(&low, &pk.modulus);
            if value.gcd(&pk.modulus).is_one() {
                return BlindingFactor {
                    value,
                    stream_id: rng.id().to_owned(),
                    draw_index,
                };
            }
        }
    }

    /// Wraps an explicit value, checking it is invertible mod `n`.
    pub fn from_value(value: BigUint, pk: &RsaPublic) -> Result<Self, CryptoError> {
        if value.is_zero() || value >= pk.modulus {
            return Err(CryptoError::OutOfRange);
        }
        if !value.gcd(&pk.modulus).is_one() {
            return Err(CryptoError::NotCoprime);
        }
        Ok(BlindingFactor {
            value,
            stream_id: "explicit".into(),
            draw_index: 0,
        })
    }
}

/// The integer a digest stands for under `pk`: big-endian bytes mod `n`.
pub fn message_representative(message: &Digest, pk: &RsaPublic) -> BigUint {
    BigUint::from_bytes_be(message.as_bytes()) % &pk.modulus
}

/// `m * r^e mod n` for an already-embedded message integer.
pub fn blind_representative(
    m: &BigUint,
    r: &BlindingFactor,
    pk: &RsaPublic,
) -> Result<BigUint, CryptoError> {
    if !r.value.gcd(&pk.modulus).is_one() {
        return Err(CryptoError::NotCoprime);
    }
    let re = r.value.modpow(&pk.exponent, &pk.modulus);
    Ok((m % &pk.modulus) * re % &pk.modulus)
}

pub fn blind(message: &Digest, r: &BlindingFactor, pk: &RsaPublic) -> Result<BigUint, CryptoError> {
    blind_representative(&message_representative(message, pk), r, pk)
}

/// Signs an opaque value: `blinded^d mod n`. The signer learns nothing about
/// the message behind it.
pub fn blind_sign(blinded: &BigUint, sk: &RsaSecret) -> Result<BigUint, CryptoError> {
    if blinded.is_zero() || *blinded >= sk.modulus {
        return Err(CryptoError::OutOfRange);
    }
    Ok(blinded.modpow(&sk.exponent, &sk.modulus))
}

/// `sig * r^-1 mod n`.
pub fn unblind(sig: &BigUint, r: &BlindingFactor, pk: &RsaPublic) -> Result<BigUint, CryptoError> {
    let inv = r.value.modinv(&pk.modulus).ok_or(CryptoError::NotCoprime)?;
    Ok(sig * inv % &pk.modulus)
}

pub fn verify_representative(m: &BigUint, sig: &BigUint, pk: &RsaPublic) -> bool {
    if pk.modulus.is_zero() || *sig >= pk.modulus {
        return false;
    }
    sig.modpow(&pk.exponent, &pk.modulus) == m % &pk.modulus
}

pub fn verify_blind_signature(message: &Digest, sig: &BigUint, pk: &RsaPublic) -> bool {
    if pk.modulus.is_zero() {
        return false;
    }
    verify_representative(&message_representative(message, pk), sig, pk)
}

/// Public mint keys, one per denomination.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MintDirectory(pub BTreeMap<u64, RsaPublic>);

impl MintDirectory {
    pub fn key_for(&self, denomination: u64) -> Option<&RsaPublic> {
        self.0.get(&denomination)
    }

    pub fn denominations(&self) -> impl Iterator<Item = u64> + '_ {
        self.0.keys().copied()
    }
}

// ---------------------------------------------------------------------------
// Ordinary signatures
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OwnerPublicKey(#[serde(with = "crate::codec::bytes_hex")] pub [u8; 32]);

impl OwnerPublicKey {
    /// Hash under which assets are transferred to this key.
    pub fn key_hash(&self) -> Digest {
        Digest::of(&self.0)
    }

    pub fn verify(&self, message: &Digest, sig: &OwnerSignature) -> bool {
        verify_signature(message, sig, self)
    }
}

impl fmt::Debug for OwnerPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OwnerPublicKey({})", &hex::encode(self.0)[..16])
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerSignature(#[serde(with = "crate::codec::bytes_hex")] pub [u8; 64]);

impl fmt::Debug for OwnerSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OwnerSignature({}..)", &hex::encode(self.0)[..16])
    }
}

/// Ed25519 key. Signatures are deterministic.
#[derive(Clone)]
pub struct OwnerKey(ed25519_dalek::SigningKey);

impl OwnerKey {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        OwnerKey(ed25519_dalek::SigningKey::from_bytes(&seed))
    }

    pub fn generate(rng: &mut SeededStream) -> Self {
        Self::from_seed(rng.bytes32())
    }

    pub fn seed(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn public(&self) -> OwnerPublicKey {
        OwnerPublicKey(self.0.verifying_key().to_bytes())
    }

    pub fn key_hash(&self) -> Digest {
        self.public().key_hash()
    }

    pub fn sign(&self, message: &Digest) -> OwnerSignature {
        sign(message, self)
    }
}

impl PartialEq for OwnerKey {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bytes() == other.0.to_bytes()
    }
}

impl Eq for OwnerKey {}

impl fmt::Debug for OwnerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OwnerKey({:?})", self.public())
    }
}

impl Serialize for OwnerKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.seed()))
    }
}

impl<'de> Deserialize<'de> for OwnerKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let mut seed = [0u8; 32];
        hex::decode_to_slice(&text, &mut seed).map_err(serde::de::Error::custom)?;
        Ok(OwnerKey::from_seed(seed))
    }
}

pub fn sign(message: &Digest, key: &OwnerKey) -> OwnerSignature {
    OwnerSignature(key.0.sign(message.as_bytes()).to_bytes())
}

pub fn verify_signature(message: &Digest, sig: &OwnerSignature, key: &OwnerPublicKey) -> bool {
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&key.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify(message.as_bytes(), &sig).is_ok()
}
