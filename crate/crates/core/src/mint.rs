//! The central bank.
//!
//! Holds one blind-signing key per denomination and serves registered banks
//! only. The mint never sees serials, owner hashes or unblinded signatures:
//! its transcript records blinded values, which carry no information about the
//! asset they will become.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asset::{verify_asset, Asset};
use crate::crypto::{blind_sign, generate_keypair, CryptoError, Digest, MintDirectory, OwnerPublicKey, SigningKeyPair};
use crate::ledger::{LedgerError, Sequencer};
use crate::rng::SeededStream;
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MintError {
    #[error("bank {0} is not registered")]
    UnknownBank(String),
    #[error("bank {0} is already registered")]
    DuplicateBank(String),
    #[error("no key for denomination {0}")]
    UnknownDenomination(u64),
    #[error("invalid asset: {0}")]
    InvalidAsset(String),
    #[error("cannot void more than is outstanding for denomination {0}")]
    VoidExceedsOutstanding(u64),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl MintError {
    pub fn code(&self) -> &'static str {
        match self {
            MintError::UnknownBank(_) => "UnknownBank",
            MintError::DuplicateBank(_) => "DuplicateBank",
            MintError::UnknownDenomination(_) => "UnknownDenomination",
            MintError::InvalidAsset(_) => "InvalidAsset",
            MintError::VoidExceedsOutstanding(_) => "VoidExceedsOutstanding",
            MintError::Crypto(e) => e.code(),
            MintError::Ledger(e) => e.code(),
        }
    }
}

/// One blinded value as submitted by a bank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedItem {
    pub denomination: u64,
    #[serde(with = "crate::codec::biguint_hex")]
    pub blinded: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRow {
    pub bank_id: String,
    #[serde(with = "crate::codec::biguint_hex")]
    pub blinded: BigUint,
    pub denomination: u64,
    pub tick: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankRegistration {
    pub public_key: OwnerPublicKey,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MintStats {
    pub issued: BTreeMap<u64, u64>,
    pub redeemed: BTreeMap<u64, u64>,
    pub outstanding: BTreeMap<u64, u64>,
    /// Σ denomination × outstanding count.
    pub outstanding_value: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mint {
    denomination_keys: BTreeMap<u64, SigningKeyPair>,
    registered_banks: BTreeMap<String, BankRegistration>,
    issued_totals: BTreeMap<u64, u64>,
    redeemed_totals: BTreeMap<u64, u64>,
    transcript: Vec<TranscriptRow>,
}

impl Mint {
    pub fn new(denominations: &[u64], key_bits: u32, rng: &mut SeededStream) -> Result<Self, MintError> {
        let mut denomination_keys = BTreeMap::new();
        for &d in denominations {
            denomination_keys.insert(d, generate_keypair(key_bits, rng)?);
        }
        Ok(Self::with_keys(denomination_keys))
    }

    pub fn with_keys(denomination_keys: BTreeMap<u64, SigningKeyPair>) -> Self {
        let zero: BTreeMap<u64, u64> = denomination_keys.keys().map(|d| (*d, 0)).collect();
        Mint {
            denomination_keys,
            registered_banks: BTreeMap::new(),
            issued_totals: zero.clone(),
            redeemed_totals: zero,
            transcript: Vec::new(),
        }
    }

    pub fn directory(&self) -> MintDirectory {
        MintDirectory(
            self.denomination_keys
                .iter()
                .map(|(d, k)| (*d, k.public.clone()))
                .collect(),
        )
    }

    pub fn register_bank(&mut self, bank_id: &str, bank_public_key: OwnerPublicKey) -> Result<(), MintError> {
        if self.registered_banks.contains_key(bank_id) {
            return Err(MintError::DuplicateBank(bank_id.to_owned()));
        }
        self.registered_banks.insert(
            bank_id.to_owned(),
            BankRegistration {
                public_key: bank_public_key,
            },
        );
        Ok(())
    }

    pub fn is_registered(&self, bank_id: &str) -> bool {
        self.registered_banks.contains_key(bank_id)
    }

    fn bank_key_hash(&self, bank_id: &str) -> Result<Digest, MintError> {
        self.registered_banks
            .get(bank_id)
            .map(|r| r.public_key.key_hash())
            .ok_or_else(|| MintError::UnknownBank(bank_id.to_owned()))
    }

    /// Blind-signs a batch for a registered bank and records an issue batch on
    /// the ledger. Nothing is signed unless every item is acceptable.
    pub fn issue(&mut self, bank_id: &str, batch: &[BlindedItem], ledger: &mut Sequencer) -> Result<Vec<BigUint>, MintError> {
        self.bank_key_hash(bank_id)?;
        let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
        for item in batch {
            let key = self
                .denomination_keys
                .get(&item.denomination)
                .ok_or(MintError::UnknownDenomination(item.denomination))?;
            if item.blinded == BigUint::default() || item.blinded >= key.public.modulus {
                return Err(CryptoError::OutOfRange.into());
            }
            *counts.entry(item.denomination).or_default() += 1;
        }
        let sigs = batch
            .iter()
            .map(|item| blind_sign(&item.blinded, &self.denomination_keys[&item.denomination].secret))
            .collect::<Result<Vec<_>, _>>()?;
        ledger.register_issue_batch(bank_id, &counts)?;
        let tick = ledger.current_tick();
        for item in batch {
            *self.issued_totals.entry(item.denomination).or_default() += 1;
            self.transcript.push(TranscriptRow {
                bank_id: bank_id.to_owned(),
                blinded: item.blinded.clone(),
                denomination: item.denomination,
                tick,
            });
        }
        Ok(sigs)
    }

    /// Cancels issuance whose signatures never reached a usable asset
    /// (the withdrawing wallet rejected them). Bounded by what is outstanding.
    pub fn void_issue(&mut self, bank_id: &str, counts: &BTreeMap<u64, u64>) -> Result<(), MintError> {
        self.bank_key_hash(bank_id)?;
        for (d, c) in counts {
            let outstanding = self.issued_totals.get(d).copied().unwrap_or(0) - self.redeemed_totals.get(d).copied().unwrap_or(0);
            if *c > outstanding {
                return Err(MintError::VoidExceedsOutstanding(*d));
            }
        }
        for (d, c) in counts {
            *self.issued_totals.entry(*d).or_default() -= c;
        }
        Ok(())
    }

    /// Redeems assets whose final transfer targets `bank_id`. Returns the
    /// credited amount.
    pub fn redeem(&mut self, bank_id: &str, assets: &[Asset], ledger: &mut Sequencer) -> Result<u64, MintError> {
        let bank_hash = self.bank_key_hash(bank_id)?;
        let directory = self.directory();
        for a in assets {
            if let Some(c) = verify_asset(a, &directory).first_failure {
                return Err(MintError::InvalidAsset(c.to_string()));
            }
            if a.history.is_empty() || a.current_owner_hash() != bank_hash {
                return Err(MintError::InvalidAsset("final transfer does not target the bank".into()));
            }
        }
        ledger.register_redemption(bank_id, assets)?;
        let mut credited = 0;
        for a in assets {
            *self.redeemed_totals.entry(a.denomination).or_default() += 1;
            credited += a.denomination;
        }
        Ok(credited)
    }

    pub fn stats(&self) -> MintStats {
        let outstanding: BTreeMap<u64, u64> = self
            .issued_totals
            .iter()
            .map(|(d, i)| (*d, i - self.redeemed_totals.get(d).copied().unwrap_or(0)))
            .collect();
        MintStats {
            issued: self.issued_totals.clone(),
            redeemed: self.redeemed_totals.clone(),
            outstanding_value: outstanding.iter().map(|(d, c)| d * c).sum(),
            outstanding,
        }
    }

    pub fn transcript(&self) -> &[TranscriptRow] {
        &self.transcript
    }

    /// Canonical JSON of the whole mint state, for audits.
    pub fn state_json(&self) -> String {
        serde_json::to_string(self).expect("mint state serializes")
    }
}
