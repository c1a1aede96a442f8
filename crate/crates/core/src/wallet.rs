//! Non-custodial consumer wallet.
//!
//! Holds the only copies of owner secret keys and blinding factors. Every
//! asset gets its own serial, owner keypair and blinding factor, so nothing
//! the wallet reveals when paying links two assets together or back to the
//! account that funded them.
//!
//! Paying is split in two halves so the wallet can sit behind a network:
//! [`Wallet::prepare_payment`] builds the spend bundle and marks the chosen
//! assets in flight; [`Wallet::complete_payment`] consumes the ledger's answer.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asset::{append_transfer, genesis_commitment, select_tokens, verify_asset, Asset, AssetError, Serial};
use crate::bank::{BankError, IssuanceChannel};
use crate::crypto::{blind, unblind, verify_blind_signature, BlindingFactor, Digest, MintDirectory, OwnerKey};
use crate::ledger::{BundleOutcome, LedgerError, LocalCluster, SpendBundle, SpendRequest};
use crate::merchant::{Invoice, PaymentProof};
use crate::mint::BlindedItem;
use crate::rng::{SeededStream, StreamState};
use crate::Tick;

pub const WALLET_SCHEMA: &str = "wallet/v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WalletError {
    #[error("amount must be positive")]
    InvalidAmount,
    #[error("a mint signature failed to verify; withdrawal rolled back")]
    VerificationFailed,
    #[error("invoice expired")]
    InvoiceExpired,
    #[error("holdings cannot make exactly {amount}")]
    CannotMakeAmount { amount: u64 },
    #[error("funds are cooling down until tick {spendable_at}")]
    HotAsset { spendable_at: Tick },
    #[error("a payment for this invoice is already in flight")]
    PaymentPending,
    #[error("no payment in flight for this invoice")]
    UnknownPayment,
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error("wallet file is corrupt: {0}")]
    CorruptFile(String),
    #[error("wallet file i/o: {0}")]
    Io(String),
}

impl WalletError {
    pub fn code(&self) -> &'static str {
        match self {
            WalletError::InvalidAmount => "InvalidAmount",
            WalletError::VerificationFailed => "VerificationFailed",
            WalletError::InvoiceExpired => "InvoiceExpired",
            WalletError::CannotMakeAmount { .. } => "CannotMakeAmount",
            WalletError::HotAsset { .. } => "HotAsset",
            WalletError::PaymentPending => "PaymentPending",
            WalletError::UnknownPayment => "UnknownPayment",
            WalletError::Ledger(e) => e.code(),
            WalletError::Bank(e) => e.code(),
            WalletError::Asset(e) => e.code(),
            WalletError::CorruptFile(_) => "CorruptFile",
            WalletError::Io(_) => "Io",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holding {
    pub asset: Asset,
    pub owner_key: OwnerKey,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingBlind {
    pub serial: Serial,
    pub denomination: u64,
    pub owner_key: OwnerKey,
    pub factor: BlindingFactor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingPayment {
    pub invoice: Invoice,
    pub bundle: SpendBundle,
    pub submitted_tick: Tick,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Balance {
    pub total: u64,
    pub spendable: u64,
    pub hot: u64,
    /// Part of `hot` tied up in unsettled payments.
    pub in_flight: u64,
    /// Token count per denomination.
    pub per_denomination: BTreeMap<u64, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawReceipt {
    pub amount: u64,
    pub denominations: Vec<u64>,
    pub issue_tick: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct WalletFile {
    schema: String,
    wallet_id: String,
    linked_account: String,
    rng: StreamState,
    mint_keys: MintDirectory,
    cooldown_ticks: u64,
    holdings: Vec<Holding>,
    pending_blinds: Vec<PendingBlind>,
    pending_payments: Vec<PendingPayment>,
    key_hashes: Vec<Digest>,
    factor_digests: Vec<Digest>,
    withdrawn_total: u64,
    paid_total: u64,
}

#[derive(Clone, Debug)]
pub struct Wallet {
    wallet_id: String,
    linked_account: String,
    rng: SeededStream,
    mint_keys: MintDirectory,
    cooldown_ticks: u64,
    holdings: Vec<Holding>,
    pending_blinds: Vec<PendingBlind>,
    pending_payments: Vec<PendingPayment>,
    key_hashes: Vec<Digest>,
    factor_digests: Vec<Digest>,
    withdrawn_total: u64,
    paid_total: u64,
    /// Copies of drawn blinding factors, kept only when an auditor asks.
    audit_tap: Option<Vec<BigUint>>,
}

impl Wallet {
    pub fn new(
        wallet_id: &str,
        linked_account: &str,
        rng: SeededStream,
        mint_keys: MintDirectory,
        cooldown_ticks: u64,
    ) -> Self {
        Wallet {
            wallet_id: wallet_id.to_owned(),
            linked_account: linked_account.to_owned(),
            rng,
            mint_keys,
            cooldown_ticks,
            holdings: Vec::new(),
            pending_blinds: Vec::new(),
            pending_payments: Vec::new(),
            key_hashes: Vec::new(),
            factor_digests: Vec::new(),
            withdrawn_total: 0,
            paid_total: 0,
            audit_tap: None,
        }
    }

    /// Starts retaining blinding factors in memory so a test harness can
    /// search captured traffic for them. Never persisted.
    pub fn enable_audit_tap(&mut self) {
        self.audit_tap.get_or_insert_with(Vec::new);
    }

    pub fn tapped_factors(&self) -> &[BigUint] {
        self.audit_tap.as_deref().unwrap_or(&[])
    }

    pub fn id(&self) -> &str {
        &self.wallet_id
    }

    pub fn linked_account(&self) -> &str {
        &self.linked_account
    }

    pub fn rng_stream_id(&self) -> &str {
        self.rng.id()
    }

    pub fn holdings(&self) -> &[Holding] {
        &self.holdings
    }

    pub fn pending_payments(&self) -> &[PendingPayment] {
        &self.pending_payments
    }

    pub fn holdings_value(&self) -> u64 {
        self.holdings.iter().map(|h| h.asset.denomination).sum()
    }

    pub fn withdrawn_total(&self) -> u64 {
        self.withdrawn_total
    }

    pub fn paid_total(&self) -> u64 {
        self.paid_total
    }

    /// Hashes of every owner key this wallet ever generated.
    pub fn generated_key_hashes(&self) -> &[Digest] {
        &self.key_hashes
    }

    /// Digests of every blinding factor this wallet ever drew.
    pub fn generated_factor_digests(&self) -> &[Digest] {
        &self.factor_digests
    }

    fn in_flight_serials(&self) -> BTreeSet<Serial> {
        self.pending_payments
            .iter()
            .flat_map(|p| p.bundle.requests.iter().map(|r| r.asset.serial))
            .collect()
    }

    pub fn balance(&self, now: Tick) -> Balance {
        let in_flight = self.in_flight_serials();
        let mut b = Balance::default();
        for h in &self.holdings {
            let d = h.asset.denomination;
            b.total += d;
            *b.per_denomination.entry(d).or_default() += 1;
            if in_flight.contains(&h.asset.serial) {
                b.in_flight += d;
            } else if h.asset.is_spendable_at(now, self.cooldown_ticks) {
                b.spendable += d;
            }
        }
        b.hot = b.total - b.spendable;
        b
    }

    /// Greedy split of `amount` over the mint's denominations.
    fn decompose(&self, amount: u64) -> Result<Vec<u64>, WalletError> {
        let mut denoms: Vec<u64> = self.mint_keys.denominations().collect();
        denoms.sort_unstable_by(|a, b| b.cmp(a));
        let mut left = amount;
        let mut out = Vec::new();
        for d in denoms {
            while left >= d {
                out.push(d);
                left -= d;
            }
        }
        if left != 0 {
            return Err(WalletError::CannotMakeAmount { amount });
        }
        Ok(out)
    }

    /// Withdraws `amount` from the linked account as fresh assets.
    pub fn withdraw(&mut self, amount: u64, channel: &mut dyn IssuanceChannel) -> Result<WithdrawReceipt, WalletError> {
        if amount == 0 {
            return Err(WalletError::InvalidAmount);
        }
        let denominations = self.decompose(amount)?;
        let mut batch = Vec::with_capacity(denominations.len());
        self.pending_blinds.clear();
        for &d in &denominations {
            let pk = self.mint_keys.key_for(d).expect("denomination from directory");
            let owner_key = OwnerKey::generate(&mut self.rng);
            let serial = Serial::random(&mut self.rng);
            let factor = BlindingFactor::draw(&mut self.rng, pk);
            self.key_hashes.push(owner_key.key_hash());
            self.factor_digests.push(Digest::of(&factor.value.to_bytes_be()));
            if let Some(tap) = self.audit_tap.as_mut() {
                tap.push(factor.value.clone());
            }
            let commitment = genesis_commitment(&serial, &owner_key.key_hash());
            batch.push(BlindedItem {
                denomination: d,
                blinded: blind(&commitment, &factor, pk).map_err(|_| WalletError::VerificationFailed)?,
            });
            self.pending_blinds.push(PendingBlind {
                serial,
                denomination: d,
                owner_key,
                factor,
            });
        }

        let sigs = match channel.withdraw(&self.linked_account, amount, &batch) {
            Ok(s) => s,
            Err(e) => {
                self.pending_blinds.clear();
                return Err(e.into());
            }
        };
        let issue_tick = channel.current_tick();
        match self.finish_blinds(&sigs, issue_tick) {
            Some(assets) => {
                self.pending_blinds.clear();
                self.holdings.extend(assets);
                self.withdrawn_total += amount;
                Ok(WithdrawReceipt {
                    amount,
                    denominations,
                    issue_tick,
                })
            }
            None => {
                let mut counts = BTreeMap::new();
                for &d in &denominations {
                    *counts.entry(d).or_default() += 1;
                }
                self.pending_blinds.clear();
                channel.reverse(&self.linked_account, &counts)?;
                Err(WalletError::VerificationFailed)
            }
        }
    }

    /// Unblinds and verifies every returned signature; `None` if any fails.
    fn finish_blinds(&self, sigs: &[BigUint], issue_tick: Tick) -> Option<Vec<Holding>> {
        if sigs.len() != self.pending_blinds.len() {
            return None;
        }
        self.pending_blinds
            .iter()
            .zip(sigs)
            .map(|(p, s)| {
                let pk = self.mint_keys.key_for(p.denomination)?;
                let sig = unblind(s, &p.factor, pk).ok()?;
                let commitment = genesis_commitment(&p.serial, &p.owner_key.key_hash());
                verify_blind_signature(&commitment, &sig, pk).then(|| Holding {
                    asset: Asset {
                        serial: p.serial,
                        denomination: p.denomination,
                        genesis_owner_hash: p.owner_key.key_hash(),
                        genesis_signature: sig,
                        history: vec![],
                        issue_tick,
                    },
                    owner_key: p.owner_key.clone(),
                })
            })
            .collect()
    }

    fn available(&self) -> Vec<Asset> {
        let in_flight = self.in_flight_serials();
        self.holdings
            .iter()
            .filter(|h| !in_flight.contains(&h.asset.serial))
            .map(|h| h.asset.clone())
            .collect()
    }

    fn choose(&self, amount: u64, now: Tick) -> Result<Vec<Asset>, WalletError> {
        let available = self.available();
        if let Ok(sel) = select_tokens(&available, amount, now, self.cooldown_ticks) {
            return Ok(sel);
        }
        let ready: BTreeSet<Tick> = available
            .iter()
            .map(|a| a.issue_tick + self.cooldown_ticks)
            .filter(|t| *t > now)
            .collect();
        for t in ready {
            if select_tokens(&available, amount, t, self.cooldown_ticks).is_ok() {
                return Err(WalletError::HotAsset { spendable_at: t });
            }
        }
        Err(WalletError::CannotMakeAmount { amount })
    }

    fn transfer_all(&self, chosen: &[Asset], invoice: &Invoice) -> Result<SpendBundle, WalletError> {
        let invoice_ref = invoice.invoice_ref();
        let mut requests = Vec::with_capacity(chosen.len());
        for a in chosen {
            let key = &self
                .holdings
                .iter()
                .find(|h| h.asset.serial == a.serial)
                .expect("chosen from holdings")
                .owner_key;
            let moved = append_transfer(a, invoice.payee_key_hash, Some(invoice_ref.clone()), key, &self.mint_keys)?;
            requests.push(SpendRequest {
                asset: moved,
                invoice_ref: invoice_ref.clone(),
            });
        }
        Ok(SpendBundle { invoice_ref, requests })
    }

    /// Builds the spend bundle for `invoice` and marks its assets in flight.
    pub fn prepare_payment(&mut self, invoice: &Invoice, now: Tick) -> Result<SpendBundle, WalletError> {
        if invoice.is_expired_at(now) {
            return Err(WalletError::InvoiceExpired);
        }
        if invoice.amount == 0 {
            return Err(WalletError::InvalidAmount);
        }
        let invoice_ref = invoice.invoice_ref();
        if self.pending_payments.iter().any(|p| p.bundle.invoice_ref == invoice_ref) {
            return Err(WalletError::PaymentPending);
        }
        let chosen = self.choose(invoice.amount, now)?;
        let bundle = self.transfer_all(&chosen, invoice)?;
        self.pending_payments.push(PendingPayment {
            invoice: invoice.clone(),
            bundle: bundle.clone(),
            submitted_tick: now,
        });
        Ok(bundle)
    }

    /// Deliberately pays two invoices of equal amount with the same assets.
    /// Only for exercising the ledger's double-spend defence.
    pub fn double_spend(&mut self, a: &Invoice, b: &Invoice, now: Tick) -> Result<(SpendBundle, SpendBundle), WalletError> {
        if a.amount != b.amount {
            return Err(WalletError::CannotMakeAmount { amount: b.amount });
        }
        if a.is_expired_at(now) || b.is_expired_at(now) {
            return Err(WalletError::InvoiceExpired);
        }
        let chosen = self.choose(a.amount, now)?;
        let first = self.transfer_all(&chosen, a)?;
        let second = self.transfer_all(&chosen, b)?;
        for (inv, bundle) in [(a, &first), (b, &second)] {
            self.pending_payments.push(PendingPayment {
                invoice: inv.clone(),
                bundle: bundle.clone(),
                submitted_tick: now,
            });
        }
        Ok((first, second))
    }

    /// Applies the ledger's answer. Certified assets leave the wallet;
    /// rejected ones become available again.
    pub fn complete_payment(&mut self, outcome: BundleOutcome) -> Result<PaymentProof, WalletError> {
        let pos = self
            .pending_payments
            .iter()
            .position(|p| &p.bundle.invoice_ref == outcome.invoice_ref())
            .ok_or(WalletError::UnknownPayment)?;
        self.pending_payments.remove(pos);
        match outcome {
            BundleOutcome::Certified { invoice_ref, spends } => {
                let gone: BTreeSet<Serial> = spends.iter().map(|s| s.asset.serial).collect();
                let before = self.holdings_value();
                self.holdings.retain(|h| !gone.contains(&h.asset.serial));
                self.paid_total += before - self.holdings_value();
                Ok(PaymentProof { invoice_ref, spends })
            }
            BundleOutcome::Rejected { error, .. } => Err(error.into()),
        }
    }

    /// Pays through an in-process cluster, driving it until settled.
    pub fn pay_local(&mut self, invoice: &Invoice, cluster: &mut LocalCluster) -> Result<PaymentProof, WalletError> {
        let bundle = self.prepare_payment(invoice, cluster.sequencer.current_tick())?;
        let invoice_ref = bundle.invoice_ref.clone();
        let outcome = match cluster.submit_bundle(bundle) {
            Ok(spends) => BundleOutcome::Certified { invoice_ref, spends },
            Err(error) => BundleOutcome::Rejected { invoice_ref, error },
        };
        self.complete_payment(outcome)
    }

    fn to_file(&self) -> WalletFile {
        WalletFile {
            schema: WALLET_SCHEMA.to_owned(),
            wallet_id: self.wallet_id.clone(),
            linked_account: self.linked_account.clone(),
            rng: self.rng.state(),
            mint_keys: self.mint_keys.clone(),
            cooldown_ticks: self.cooldown_ticks,
            holdings: self.holdings.clone(),
            pending_blinds: self.pending_blinds.clone(),
            pending_payments: self.pending_payments.clone(),
            key_hashes: self.key_hashes.clone(),
            factor_digests: self.factor_digests.clone(),
            withdrawn_total: self.withdrawn_total,
            paid_total: self.paid_total,
        }
    }

    /// Canonical JSON of the complete wallet state.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("wallet serializes")
    }

    /// Parses and checks a wallet file. Refuses anything short of a complete,
    /// consistent state.
    pub fn from_json(text: &str) -> Result<Self, WalletError> {
        let f: WalletFile = serde_json::from_str(text).map_err(|e| WalletError::CorruptFile(e.to_string()))?;
        if f.schema != WALLET_SCHEMA {
            return Err(WalletError::CorruptFile(format!("unknown schema {:?}", f.schema)));
        }
        for h in &f.holdings {
            if !verify_asset(&h.asset, &f.mint_keys).valid || h.asset.current_owner_hash() != h.owner_key.key_hash() {
                return Err(WalletError::CorruptFile(format!("holding {} does not verify", h.asset.serial.to_hex())));
            }
        }
        Ok(Wallet {
            wallet_id: f.wallet_id,
            linked_account: f.linked_account,
            rng: SeededStream::restore(&f.rng),
            mint_keys: f.mint_keys,
            cooldown_ticks: f.cooldown_ticks,
            holdings: f.holdings,
            pending_blinds: f.pending_blinds,
            pending_payments: f.pending_payments,
            key_hashes: f.key_hashes,
            factor_digests: f.factor_digests,
            withdrawn_total: f.withdrawn_total,
            paid_total: f.paid_total,
            audit_tap: None,
        })
    }

    pub fn persist(&self, path: &Path) -> Result<(), WalletError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()).map_err(|e| WalletError::Io(e.to_string()))?;
        fs::rename(&tmp, path).map_err(|e| WalletError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, WalletError> {
        let text = fs::read_to_string(path).map_err(|e| WalletError::Io(e.to_string()))?;
        Self::from_json(&text)
    }
}

impl PartialEq for Wallet {
    fn eq(&self, other: &Self) -> bool {
        self.to_file() == other.to_file()
    }
}
