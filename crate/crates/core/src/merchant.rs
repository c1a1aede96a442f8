//! Merchant till.
//!
//! Issues invoices, checks payment proofs itself (asset chains, ledger entries
//! and validator certificates) and holds received assets until they are
//! deposited at the merchant's bank.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asset::{append_transfer, verify_asset, Asset, InvoiceRef};
use crate::bank::{Bank, BankError};
use crate::crypto::{Digest, MintDirectory, OwnerKey};
use crate::ledger::{CertifiedSpend, EntryKind, Sequencer, ValidatorSet};
use crate::mint::Mint;
use crate::rng::SeededStream;
use crate::Tick;

pub const DEFAULT_INVOICE_EXPIRY_TICKS: u64 = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MerchantError {
    #[error("invoice amount must be positive")]
    InvalidAmount,
    #[error("payment does not match an invoice of this till")]
    WrongInvoice,
    #[error("invoice is already paid")]
    AlreadyPaid,
    #[error("invoice expired")]
    Expired,
    #[error("certificate or ledger entry does not check out")]
    BadCertificate,
    #[error("payment totals {received}, invoice asks {expected}")]
    AmountMismatch { expected: u64, received: u64 },
    #[error(transparent)]
    Bank(#[from] BankError),
}

impl MerchantError {
    pub fn code(&self) -> &'static str {
        match self {
            MerchantError::InvalidAmount => "InvalidAmount",
            MerchantError::WrongInvoice => "WrongInvoice",
            MerchantError::AlreadyPaid => "AlreadyPaid",
            MerchantError::Expired => "Expired",
            MerchantError::BadCertificate => "BadCertificate",
            MerchantError::AmountMismatch { .. } => "AmountMismatch",
            MerchantError::Bank(e) => e.code(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invoice {
    pub merchant_id: String,
    pub invoice_id: String,
    pub amount: u64,
    pub expiry_tick: Tick,
    /// Key hash the payer transfers to.
    pub payee_key_hash: Digest,
}

impl Invoice {
    pub fn invoice_ref(&self) -> InvoiceRef {
        InvoiceRef {
            merchant_id: self.merchant_id.clone(),
            invoice_id: self.invoice_id.clone(),
        }
    }

    pub fn is_expired_at(&self, tick: Tick) -> bool {
        tick > self.expiry_tick
    }
}

/// What the wallet hands the merchant once its spends are certified.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentProof {
    pub invoice_ref: InvoiceRef,
    pub spends: Vec<CertifiedSpend>,
}

impl PaymentProof {
    pub fn total(&self) -> u64 {
        self.spends.iter().map(|s| s.asset.denomination).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum InvoiceStatus {
    Open,
    Paid { tick: Tick },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvoiceRecord {
    pub invoice: Invoice,
    pub status: InvoiceStatus,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Merchant {
    merchant_id: String,
    key: OwnerKey,
    expiry_ticks: u64,
    next_invoice: u64,
    next_deposit: u64,
    invoices: BTreeMap<String, InvoiceRecord>,
    holdings: Vec<Asset>,
    validators: ValidatorSet,
    mint_keys: MintDirectory,
    revenue: u64,
    custody: u64,
    deposited: u64,
}

impl Merchant {
    /// `merchant_id` is the merchant's account id at its bank.
    pub fn new(
        merchant_id: &str,
        rng: &mut SeededStream,
        validators: ValidatorSet,
        mint_keys: MintDirectory,
        expiry_ticks: u64,
    ) -> Self {
        Merchant {
            merchant_id: merchant_id.to_owned(),
            key: OwnerKey::generate(rng),
            expiry_ticks,
            next_invoice: 0,
            next_deposit: 0,
            invoices: BTreeMap::new(),
            holdings: Vec::new(),
            validators,
            mint_keys,
            revenue: 0,
            custody: 0,
            deposited: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.merchant_id
    }

    pub fn key_hash(&self) -> Digest {
        self.key.key_hash()
    }

    pub fn create_invoice(&mut self, amount: u64, current_tick: Tick) -> Result<Invoice, MerchantError> {
        if amount == 0 {
            return Err(MerchantError::InvalidAmount);
        }
        self.next_invoice += 1;
        let invoice = Invoice {
            merchant_id: self.merchant_id.clone(),
            invoice_id: format!("inv-{:06}", self.next_invoice),
            amount,
            expiry_tick: current_tick + self.expiry_ticks,
            payee_key_hash: self.key_hash(),
        };
        self.invoices.insert(
            invoice.invoice_id.clone(),
            InvoiceRecord {
                invoice: invoice.clone(),
                status: InvoiceStatus::Open,
            },
        );
        Ok(invoice)
    }

    pub fn invoice(&self, invoice_id: &str) -> Option<&InvoiceRecord> {
        self.invoices.get(invoice_id)
    }

    pub fn invoices(&self) -> impl Iterator<Item = &InvoiceRecord> {
        self.invoices.values()
    }

    /// Checks one certified spend: the asset chain, that it lands on this
    /// till for `invoice_ref`, and that the ledger entry is quorum-signed.
    fn check_spend(&self, s: &CertifiedSpend, invoice_ref: &InvoiceRef) -> Result<(), MerchantError> {
        if !verify_asset(&s.asset, &self.mint_keys).valid {
            return Err(MerchantError::BadCertificate);
        }
        let last = s.asset.last_record().ok_or(MerchantError::WrongInvoice)?;
        if last.to_key_hash != self.key_hash() || last.invoice_ref.as_ref() != Some(invoice_ref) {
            return Err(MerchantError::WrongInvoice);
        }
        let e = &s.entry;
        let entry_ok = e.kind == EntryKind::Spend
            && e.hash_ok()
            && e.nullifier == s.asset.last_nullifier()
            && e.recipient_id == self.merchant_id
            && e.amount == s.asset.denomination
            && s.certificate.entry_hash == e.entry_hash;
        if !entry_ok || !self.validators.verify_certificate(&s.certificate) {
            return Err(MerchantError::BadCertificate);
        }
        Ok(())
    }

    fn check_proof(&self, proof: &PaymentProof) -> Result<(), MerchantError> {
        let mut serials = BTreeSet::new();
        for s in &proof.spends {
            self.check_spend(s, &proof.invoice_ref)?;
            if !serials.insert(s.asset.serial) {
                return Err(MerchantError::BadCertificate);
            }
        }
        Ok(())
    }

    /// Accepts a payment for one of this till's open invoices. Expiry is
    /// judged at the ledger tick the spends were recorded.
    pub fn accept_payment(&mut self, proof: &PaymentProof) -> Result<u64, MerchantError> {
        if proof.invoice_ref.merchant_id != self.merchant_id {
            return Err(MerchantError::WrongInvoice);
        }
        let record = self
            .invoices
            .get(&proof.invoice_ref.invoice_id)
            .ok_or(MerchantError::WrongInvoice)?;
        if record.status != InvoiceStatus::Open {
            return Err(MerchantError::AlreadyPaid);
        }
        let recorded_at = proof.spends.iter().map(|s| s.entry.tick).max().unwrap_or(0);
        if record.invoice.is_expired_at(recorded_at) {
            return Err(MerchantError::Expired);
        }
        self.check_proof(proof)?;
        let expected = record.invoice.amount;
        let received = proof.total();
        if received != expected {
            return Err(MerchantError::AmountMismatch { expected, received });
        }
        self.invoices
            .get_mut(&proof.invoice_ref.invoice_id)
            .expect("checked above")
            .status = InvoiceStatus::Paid { tick: recorded_at };
        self.holdings.extend(proof.spends.iter().map(|s| s.asset.clone()));
        self.revenue += received;
        Ok(received)
    }

    /// Keeps assets from a proof that was refused (expired, mismatched or a
    /// second payment) but whose spends are genuinely certified to this till.
    /// The value is already the merchant's on the ledger; the till holds it
    /// pending a refund process outside this system.
    pub fn take_custody(&mut self, proof: &PaymentProof) -> Result<u64, MerchantError> {
        if proof.invoice_ref.merchant_id != self.merchant_id {
            return Err(MerchantError::WrongInvoice);
        }
        self.check_proof(proof)?;
        let held: BTreeSet<_> = self.holdings.iter().map(|a| a.serial).collect();
        let mut value = 0;
        for s in &proof.spends {
            if !held.contains(&s.asset.serial) {
                value += s.asset.denomination;
                self.holdings.push(s.asset.clone());
            }
        }
        self.custody += value;
        Ok(value)
    }

    pub fn unredeemed(&self) -> &[Asset] {
        &self.holdings
    }

    pub fn unredeemed_value(&self) -> u64 {
        self.holdings.iter().map(|a| a.denomination).sum()
    }

    /// Σ amounts of paid invoices.
    pub fn revenue(&self) -> u64 {
        self.revenue
    }

    pub fn custody_value(&self) -> u64 {
        self.custody
    }

    pub fn deposited(&self) -> u64 {
        self.deposited
    }

    /// Moves every unredeemed asset to the bank and has it credited. Holdings
    /// are kept if the bank refuses.
    pub fn deposit(&mut self, bank: &mut Bank, mint: &mut Mint, ledger: &mut Sequencer) -> Result<u64, MerchantError> {
        if self.holdings.is_empty() {
            return Ok(0);
        }
        self.next_deposit += 1;
        let dep = InvoiceRef {
            merchant_id: self.merchant_id.clone(),
            invoice_id: format!("deposit-{:06}", self.next_deposit),
        };
        let moved = self
            .holdings
            .iter()
            .map(|a| append_transfer(a, bank.key_hash(), Some(dep.clone()), &self.key, &self.mint_keys))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| MerchantError::BadCertificate)?;
        let credited = bank.deposit_merchant(&self.merchant_id, &moved, mint, ledger)?;
        self.holdings.clear();
        self.deposited += credited;
        Ok(credited)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wallet::tests::World;

    fn paid(seed: u64, invoice_amount: u64, pay_amount: u64) -> (World, Invoice, PaymentProof) {
        let mut w = World::new(seed, 100);
        w.withdraw(pay_amount).unwrap();
        w.cluster.advance(5);
        let inv = w.merchant.create_invoice(invoice_amount, w.now()).unwrap();
        let mut pay_as = inv.clone();
        pay_as.amount = pay_amount;
        let proof = w.wallet.pay_local(&pay_as, &mut w.cluster).unwrap();
        (w, inv, proof)
    }

    #[test]
    fn invoices() {
        let mut w = World::new(20, 0);
        let a = w.merchant.create_invoice(37, 3).unwrap();
        let b = w.merchant.create_invoice(37, 3).unwrap();
        assert_eq!(a.amount, 37);
        assert_eq!(a.expiry_tick, 23);
        assert_ne!(a.invoice_id, b.invoice_id);
        assert_eq!(w.merchant.create_invoice(0, 3).unwrap_err(), MerchantError::InvalidAmount);
        assert_eq!(w.merchant.invoice(&a.invoice_id).unwrap().status, InvoiceStatus::Open);
    }

    #[test]
    fn matching_payment_marks_paid() {
        let (mut w, inv, proof) = paid(21, 30, 30);
        w.merchant.accept_payment(&proof).unwrap();
        assert!(matches!(w.merchant.invoice(&inv.invoice_id).unwrap().status, InvoiceStatus::Paid { .. }));
        assert_eq!(w.merchant.unredeemed_value(), 30);
        assert_eq!(w.merchant.revenue(), 30);
    }

    #[test]
    fn short_payment_is_amount_mismatch() {
        let (mut w, _, proof) = paid(22, 37, 36);
        assert_eq!(
            w.merchant.accept_payment(&proof).unwrap_err(),
            MerchantError::AmountMismatch { expected: 37, received: 36 }
        );
        assert_eq!(w.merchant.take_custody(&proof).unwrap(), 36);
        assert_eq!(w.merchant.unredeemed_value(), 36);
        assert_eq!(w.merchant.revenue(), 0);
    }

    #[test]
    fn thin_certificate_is_rejected() {
        let (mut w, _, mut proof) = paid(23, 10, 10);
        proof.spends[0].certificate.acks.truncate(1);
        assert_eq!(w.merchant.accept_payment(&proof).unwrap_err(), MerchantError::BadCertificate);
        let (mut w, _, mut proof) = paid(24, 10, 10);
        proof.spends[0].entry.recipient_id = "elsewhere".into();
        assert_eq!(w.merchant.accept_payment(&proof).unwrap_err(), MerchantError::BadCertificate);
    }

    #[test]
    fn foreign_or_unknown_invoice() {
        let (mut w, _, mut proof) = paid(25, 10, 10);
        proof.invoice_ref.invoice_id = "inv-999999".into();
        assert_eq!(w.merchant.accept_payment(&proof).unwrap_err(), MerchantError::WrongInvoice);
        proof.invoice_ref.merchant_id = "someone".into();
        assert_eq!(w.merchant.accept_payment(&proof).unwrap_err(), MerchantError::WrongInvoice);
    }

    #[test]
    fn late_recording_is_expired() {
        let mut w = World::new(26, 100);
        w.withdraw(10).unwrap();
        w.cluster.advance(5);
        let inv = w.merchant.create_invoice(10, w.now()).unwrap();
        let mut proof = w.wallet.pay_local(&inv, &mut w.cluster).unwrap();
        for s in &mut proof.spends {
            s.entry.tick = inv.expiry_tick + 1;
        }
        assert_eq!(w.merchant.accept_payment(&proof).unwrap_err(), MerchantError::Expired);
    }

    #[test]
    fn replayed_deposit_propagates_already_spent() {
        let (mut w, _, proof) = paid(27, 30, 30);
        w.merchant.accept_payment(&proof).unwrap();
        w.merchant.deposit(&mut w.bank, &mut w.mint, &mut w.cluster.sequencer).unwrap();
        w.merchant.take_custody(&proof).unwrap();
        let err = w.merchant.deposit(&mut w.bank, &mut w.mint, &mut w.cluster.sequencer).unwrap_err();
        assert_eq!(err.code(), "AlreadySpent");
        assert_eq!(w.merchant.unredeemed_value(), 30);
    }
}
