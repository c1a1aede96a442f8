//! Self-verifying assets.
//!
//! An [`Asset`] carries everything needed to check it: the mint's blind
//! signature over a genesis commitment `H(serial ‖ owner_key_hash)` and an
//! append-only list of [`TransferRecord`]s, each signed by the key that owned
//! the asset at that point. Nobody has to track asset state on the asset's
//! behalf; the ledger only remembers [`Nullifier`]s.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    verify_blind_signature, Digest, MintDirectory, OwnerKey, OwnerPublicKey, OwnerSignature,
};
use crate::rng::SeededStream;
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssetError {
    #[error("signing key does not own this asset")]
    WrongOwnerKey,
    #[error("asset failed verification: {0}")]
    Unverifiable(FailedCheck),
    #[error("malformed serial")]
    MalformedSerial,
    #[error("no exact combination of spendable assets makes {0}")]
    CannotMakeAmount(u64),
}

impl AssetError {
    pub fn code(&self) -> &'static str {
        match self {
            AssetError::WrongOwnerKey => "WrongOwnerKey",
            AssetError::Unverifiable(_) => "InvalidAsset",
            AssetError::MalformedSerial => "MalformedSerial",
            AssetError::CannotMakeAmount(_) => "CannotMakeAmount",
        }
    }
}

/// 32 random bytes naming one asset.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Serial(#[serde(with = "crate::codec::bytes_hex")] pub [u8; 32]);

impl Serial {
    pub fn random(rng: &mut SeededStream) -> Self {
        Serial(rng.bytes32())
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, AssetError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| AssetError::MalformedSerial)?;
        Ok(Serial(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Serial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Serial({})", &self.to_hex()[..12])
    }
}

/// Names the invoice a transfer settles.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InvoiceRef {
    pub merchant_id: String,
    pub invoice_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub index: u64,
    pub from_public_key: OwnerPublicKey,
    pub to_key_hash: Digest,
    pub invoice_ref: Option<InvoiceRef>,
    pub signature: OwnerSignature,
}

impl TransferRecord {
    /// `H(serial ‖ index ‖ to_key_hash ‖ invoice_ref)`.
    pub fn signing_message(
        serial: &Serial,
        index: u64,
        to_key_hash: &Digest,
        invoice_ref: Option<&InvoiceRef>,
    ) -> Digest {
        let b = Digest::builder()
            .fixed(&serial.0)
            .u64(index)
            .fixed(to_key_hash.as_bytes());
        match invoice_ref {
            None => b.fixed(&[0]),
            Some(r) => b
                .fixed(&[1])
                .field(r.merchant_id.as_bytes())
                .field(r.invoice_id.as_bytes()),
        }
        .finish()
    }
}

/// Double-spend key for the transfer at `index`: `H(serial ‖ index)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Nullifier(pub Digest);

impl fmt::Debug for Nullifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nullifier({})", &self.0.to_hex()[..12])
    }
}

/// Index is serialized as 8-byte big-endian.
pub fn nullifier(serial: &Serial, index: u64) -> Nullifier {
    Nullifier(Digest::builder().fixed(&serial.0).u64(index).finish())
}

pub fn genesis_commitment(serial: &Serial, owner_key_hash: &Digest) -> Digest {
    Digest::builder()
        .fixed(&serial.0)
        .fixed(owner_key_hash.as_bytes())
        .finish()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub serial: Serial,
    pub denomination: u64,
    pub genesis_owner_hash: Digest,
    #[serde(with = "crate::codec::biguint_hex")]
    pub genesis_signature: BigUint,
    pub history: Vec<TransferRecord>,
    pub issue_tick: Tick,
}

impl Asset {
    /// Key hash of whoever may sign the next transfer.
    pub fn current_owner_hash(&self) -> Digest {
        self.history
            .last()
            .map(|r| r.to_key_hash)
            .unwrap_or(self.genesis_owner_hash)
    }

    /// Nullifier of the most recent transfer, `None` for an untransferred asset.
    pub fn last_nullifier(&self) -> Option<Nullifier> {
        self.history.last().map(|r| nullifier(&self.serial, r.index))
    }

    pub fn last_record(&self) -> Option<&TransferRecord> {
        self.history.last()
    }

    pub fn is_spendable_at(&self, tick: Tick, cooldown: u64) -> bool {
        tick >= self.issue_tick.saturating_add(cooldown)
    }

    /// Canonical JSON encoding (fixed field order, hex binary fields).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("asset serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailedCheck {
    GenesisSignature,
    ChainLinkage,
    RecordSignature,
    IndexGap,
}

impl fmt::Display for FailedCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailedCheck::GenesisSignature => "genesis-signature",
            FailedCheck::ChainLinkage => "chain-linkage",
            FailedCheck::RecordSignature => "record-signature",
            FailedCheck::IndexGap => "index-gap",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub valid: bool,
    pub first_failure: Option<FailedCheck>,
}

impl VerificationReport {
    fn fail(check: FailedCheck) -> Self {
        VerificationReport {
            valid: false,
            first_failure: Some(check),
        }
    }

    pub fn into_result(self) -> Result<(), AssetError> {
        match self.first_failure {
            None => Ok(()),
            Some(c) => Err(AssetError::Unverifiable(c)),
        }
    }
}

/// Checks an asset using only its own contents and the mint's public keys.
///
/// The genesis signature is checked first, then each record in order for
/// index continuity, owner linkage and signature.
pub fn verify_asset(asset: &Asset, mint_keys: &MintDirectory) -> VerificationReport {
    let genesis_ok = mint_keys
        .key_for(asset.denomination)
        .map(|pk| {
            let c = genesis_commitment(&asset.serial, &asset.genesis_owner_hash);
            verify_blind_signature(&c, &asset.genesis_signature, pk)
        })
        .unwrap_or(false);
    if !genesis_ok {
        return VerificationReport::fail(FailedCheck::GenesisSignature);
    }
    let mut owner = asset.genesis_owner_hash;
    for (i, rec) in asset.history.iter().enumerate() {
        if rec.index != i as u64 {
            return VerificationReport::fail(FailedCheck::IndexGap);
        }
        if rec.from_public_key.key_hash() != owner {
            return VerificationReport::fail(FailedCheck::ChainLinkage);
        }
        let msg = TransferRecord::signing_message(
            &asset.serial,
            rec.index,
            &rec.to_key_hash,
            rec.invoice_ref.as_ref(),
        );
        if !rec.from_public_key.verify(&msg, &rec.signature) {
            return VerificationReport::fail(FailedCheck::RecordSignature);
        }
        owner = rec.to_key_hash;
    }
    VerificationReport {
        valid: true,
        first_failure: None,
    }
}

/// Returns a copy of `asset` extended by one transfer signed with `owner_key`.
pub fn append_transfer(
    asset: &Asset,
    to_key_hash: Digest,
    invoice_ref: Option<InvoiceRef>,
    owner_key: &OwnerKey,
    mint_keys: &MintDirectory,
) -> Result<Asset, AssetError> {
    verify_asset(asset, mint_keys).into_result()?;
    if owner_key.key_hash() != asset.current_owner_hash() {
        return Err(AssetError::WrongOwnerKey);
    }
    let index = asset.history.len() as u64;
    let msg = TransferRecord::signing_message(&asset.serial, index, &to_key_hash, invoice_ref.as_ref());
    let mut next = asset.clone();
    next.history.push(TransferRecord {
        index,
        from_public_key: owner_key.public(),
        to_key_hash,
        invoice_ref,
        signature: owner_key.sign(&msg),
    });
    Ok(next)
}

/// Exact-sum selection among assets spendable at `current_tick`.
///
/// Candidates are ordered by denomination descending, then serial. For each
/// denomination (largest first) the search takes as many tokens as fit and
/// backs off one at a time when the remainder cannot be completed. The first
/// solution in that order is returned, so the result is deterministic.
pub fn select_tokens(
    holdings: &[Asset],
    amount: u64,
    current_tick: Tick,
    cooldown: u64,
) -> Result<Vec<Asset>, AssetError> {
    if amount == 0 {
        return Err(AssetError::CannotMakeAmount(0));
    }
    let mut candidates: Vec<&Asset> = holdings
        .iter()
        .filter(|a| a.is_spendable_at(current_tick, cooldown))
        .collect();
    candidates.sort_by(|a, b| b.denomination.cmp(&a.denomination).then(a.serial.cmp(&b.serial)));

    let mut groups: Vec<(u64, Vec<&Asset>)> = Vec::new();
    for a in candidates {
        match groups.last_mut() {
            Some((d, v)) if *d == a.denomination => v.push(a),
            _ => groups.push((a.denomination, vec![a])),
        }
    }

    let mut counts = vec![0usize; groups.len()];
    let mut dead: BTreeMap<(usize, u64), ()> = BTreeMap::new();
    if !search(&groups, 0, amount, &mut counts, &mut dead) {
        return Err(AssetError::CannotMakeAmount(amount));
    }
    Ok(groups
        .iter()
        .zip(&counts)
        .flat_map(|((_, v), &c)| v[..c].iter().map(|a| (*a).clone()))
        .collect())
}

fn search(
    groups: &[(u64, Vec<&Asset>)],
    at: usize,
    remaining: u64,
    counts: &mut [usize],
    dead: &mut BTreeMap<(usize, u64), ()>,
) -> bool {
    if remaining == 0 {
        return true;
    }
    if at == groups.len() || dead.contains_key(&(at, remaining)) {
        return false;
    }
    let (denom, items) = &groups[at];
    let max = (remaining / denom).min(items.len() as u64) as usize;
    for take in (0..=max).rev() {
        counts[at] = take;
        if search(groups, at + 1, remaining - denom * take as u64, counts, dead) {
            return true;
        }
    }
    counts[at] = 0;
    dead.insert((at, remaining), ());
    false
}


#[cfg(test)]
mod tests {
    use super::test_support::TestMint;
    use super::*;
    use num_traits::One;
    use sha2::{Digest as _, Sha256};

    fn invoice(m: &str, i: &str) -> Option<InvoiceRef> {
        Some(InvoiceRef {
            merchant_id: m.into(),
            invoice_id: i.into(),
        })
    }

    #[test]
    fn commitment_is_stable_and_serial_sensitive() {
        let s = Serial([7; 32]);
        let h = Digest::of(b"owner");
        assert_eq!(genesis_commitment(&s, &h), genesis_commitment(&s, &h));
        assert_ne!(genesis_commitment(&s, &h), genesis_commitment(&Serial([8; 32]), &h));
        assert_eq!(Serial::from_slice(&[1; 31]).unwrap_err(), AssetError::MalformedSerial);
    }

    #[test]
    fn nullifier_matches_reference_sha256() {
        let s = Serial([0xab; 32]);
        let mut buf = s.0.to_vec();
        buf.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0, 1]);
        let reference: [u8; 32] = Sha256::digest(&buf).into();
        assert_eq!(nullifier(&s, 1).0 .0, reference);
        assert_eq!(nullifier(&s, 0), nullifier(&s, 0));
        assert_ne!(nullifier(&s, 0), nullifier(&s, 1));
    }

    #[test]
    fn fresh_asset_verifies_and_tampering_is_caught() {
        let mint = TestMint::new(1);
        let mut rng = SeededStream::seeded(2);
        let (asset, _) = mint.issue(&mut rng, 10, 0);
        assert!(verify_asset(&asset, &mint.directory).valid);

        let mut bad = asset.clone();
        bad.genesis_signature += BigUint::one();
        assert_eq!(
            verify_asset(&bad, &mint.directory).first_failure,
            Some(FailedCheck::GenesisSignature)
        );

        let mut wrong_denom = asset.clone();
        wrong_denom.denomination = 20;
        assert!(!verify_asset(&wrong_denom, &mint.directory).valid);
    }

    #[test]
    fn transfers_chain_and_keep_prefix() {
        let mint = TestMint::new(1);
        let mut rng = SeededStream::seeded(3);
        let (asset, owner) = mint.issue(&mut rng, 20, 0);
        let merchant = OwnerKey::generate(&mut rng);
        let bank = OwnerKey::generate(&mut rng);

        let paid = append_transfer(&asset, merchant.key_hash(), invoice("m", "1"), &owner, &mint.directory).unwrap();
        assert!(asset.history.is_empty());
        assert_eq!(paid.history.len(), 1);
        assert_eq!(paid.history[0].index, 0);

        let redeemed = append_transfer(&paid, bank.key_hash(), None, &merchant, &mint.directory).unwrap();
        assert_eq!(redeemed.history[..1], paid.history[..]);
        assert_eq!(redeemed.history.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1]);
        assert!(verify_asset(&redeemed, &mint.directory).valid);

        assert_eq!(
            append_transfer(&paid, bank.key_hash(), None, &owner, &mint.directory).unwrap_err(),
            AssetError::WrongOwnerKey
        );
    }

    #[test]
    fn index_gap_detected() {
        let mint = TestMint::new(1);
        let mut rng = SeededStream::seeded(4);
        let (asset, owner) = mint.issue(&mut rng, 5, 0);
        let m = OwnerKey::generate(&mut rng);
        let b = OwnerKey::generate(&mut rng);
        let a1 = append_transfer(&asset, m.key_hash(), None, &owner, &mint.directory).unwrap();
        let mut a2 = append_transfer(&a1, b.key_hash(), None, &m, &mint.directory).unwrap();
        a2.history[1].index = 2;
        let report = verify_asset(&a2, &mint.directory);
        assert!(!report.valid);
        assert_eq!(report.first_failure, Some(FailedCheck::IndexGap));
    }

    #[test]
    fn unverifiable_asset_cannot_be_transferred() {
        let mint = TestMint::new(1);
        let mut rng = SeededStream::seeded(5);
        let (mut asset, owner) = mint.issue(&mut rng, 5, 0);
        asset.serial.0[0] ^= 1;
        assert!(matches!(
            append_transfer(&asset, Digest::ZERO, None, &owner, &mint.directory),
            Err(AssetError::Unverifiable(FailedCheck::GenesisSignature))
        ));
    }

    fn fake(denomination: u64, serial: u8, issue_tick: Tick) -> Asset {
        Asset {
            serial: Serial([serial; 32]),
            denomination,
            genesis_owner_hash: Digest::ZERO,
            genesis_signature: BigUint::one(),
            history: vec![],
            issue_tick,
        }
    }

    #[test]
    fn greedy_selection() {
        let h: Vec<Asset> = [50, 20, 10, 5, 1, 1]
            .iter()
            .enumerate()
            .map(|(i, d)| fake(*d, i as u8, 0))
            .collect();
        let picked = select_tokens(&h, 37, 10, 5).unwrap();
        let denoms: Vec<u64> = picked.iter().map(|a| a.denomination).collect();
        assert_eq!(denoms, vec![20, 10, 5, 1, 1]);
        assert_eq!(
            select_tokens(&[fake(50, 0, 0)], 37, 10, 5).unwrap_err(),
            AssetError::CannotMakeAmount(37)
        );
    }

    #[test]
    fn selection_backtracks_past_greedy_dead_end() {
        // Taking the 50 leaves 10 that cannot be made; the answer is 20+20+20.
        let h = vec![fake(50, 1, 0), fake(20, 2, 0), fake(20, 3, 0), fake(20, 4, 0)];
        let picked = select_tokens(&h, 60, 10, 5).unwrap();
        assert_eq!(picked.iter().map(|a| a.denomination).collect::<Vec<_>>(), vec![20, 20, 20]);
    }

    #[test]
    fn selection_skips_hot_assets() {
        let h = vec![fake(20, 1, 8), fake(10, 2, 0), fake(10, 3, 0)];
        let picked = select_tokens(&h, 20, 10, 5).unwrap();
        assert!(picked.iter().all(|a| a.denomination == 10));
        assert!(select_tokens(&h, 40, 10, 5).is_err());
    }

    #[test]
    fn canonical_json_field_order() {
        let json = fake(5, 1, 3).canonical_json();
        let order = ["serial", "denomination", "genesis_owner_hash", "genesis_signature", "history", "issue_tick"];
        let mut last = 0;
        for k in order {
            let at = json.find(&format!("\"{k}\"")).unwrap();
            assert!(at >= last);
            last = at;
        }
    }
}
