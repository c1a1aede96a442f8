//! Tier-two bank.
//!
//! Keeps fiat accounts, turns account debits into blind issuance by relaying
//! blinded batches to the mint, and takes merchant deposits. The bank knows
//! who withdrew and how much, never which tokens: it forwards blinded values
//! and keeps no copy of them. Every merchant credit writes one AML row naming
//! the merchant's legal identity.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asset::Asset;
use crate::crypto::{Digest, OwnerKey};
use crate::ledger::Sequencer;
use crate::mint::{BlindedItem, Mint, MintError};
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BankError {
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("insufficient funds: balance {balance}, requested {requested}")]
    InsufficientFunds { balance: u64, requested: u64 },
    #[error("batch totals {batch_total} but {amount} was requested")]
    AmountMismatch { amount: u64, batch_total: u64 },
    #[error("merchant accounts need a legal identity")]
    MissingIdentity,
    #[error("account {0} is not a merchant account")]
    NotAMerchant(String),
    #[error("asset was not paid to this merchant and then to this bank")]
    WrongRecipient,
    #[error(transparent)]
    Mint(#[from] MintError),
}

impl BankError {
    pub fn code(&self) -> &'static str {
        match self {
            BankError::UnknownAccount(_) => "UnknownAccount",
            BankError::InsufficientFunds { .. } => "InsufficientFunds",
            BankError::AmountMismatch { .. } => "AmountMismatch",
            BankError::MissingIdentity => "MissingIdentity",
            BankError::NotAMerchant(_) => "NotAMerchant",
            BankError::WrongRecipient => "WrongRecipient",
            BankError::Mint(e) => e.code(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderKind {
    Consumer,
    Merchant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub account_id: String,
    pub holder_kind: HolderKind,
    pub balance: u64,
    pub aml_record: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmlRow {
    pub bank_id: String,
    pub merchant_account_id: String,
    pub legal_identity: String,
    pub amount: u64,
    pub tick: Tick,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WithdrawalRow {
    pub account_id: String,
    pub amount: u64,
    pub tick: Tick,
    pub reversed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bank {
    id: String,
    key: OwnerKey,
    accounts: BTreeMap<String, Account>,
    next_account: u64,
    aml_log: Vec<AmlRow>,
    withdrawals: Vec<WithdrawalRow>,
}

impl Bank {
    pub fn new(id: &str, key: OwnerKey) -> Self {
        Bank {
            id: id.to_owned(),
            key,
            accounts: BTreeMap::new(),
            next_account: 0,
            aml_log: Vec::new(),
            withdrawals: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn public_key(&self) -> crate::crypto::OwnerPublicKey {
        self.key.public()
    }

    /// Hash merchants transfer deposited assets to.
    pub fn key_hash(&self) -> Digest {
        self.key.key_hash()
    }

    pub fn open_account(
        &mut self,
        holder_kind: HolderKind,
        legal_identity: &str,
        opening_balance: u64,
    ) -> Result<String, BankError> {
        if holder_kind == HolderKind::Merchant && legal_identity.trim().is_empty() {
            return Err(BankError::MissingIdentity);
        }
        let account_id = format!("{}/acct-{:04}", self.id, self.next_account);
        self.next_account += 1;
        self.accounts.insert(
            account_id.clone(),
            Account {
                account_id: account_id.clone(),
                holder_kind,
                balance: opening_balance,
                aml_record: legal_identity.to_owned(),
            },
        );
        Ok(account_id)
    }

    pub fn balance(&self, account_id: &str) -> Result<u64, BankError> {
        self.accounts
            .get(account_id)
            .map(|a| a.balance)
            .ok_or_else(|| BankError::UnknownAccount(account_id.to_owned()))
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn total_balances(&self) -> u64 {
        self.accounts.values().map(|a| a.balance).sum()
    }

    pub fn aml_log(&self) -> &[AmlRow] {
        &self.aml_log
    }

    pub fn withdrawals(&self) -> &[WithdrawalRow] {
        &self.withdrawals
    }

    fn account_mut(&mut self, account_id: &str) -> Result<&mut Account, BankError> {
        self.accounts
            .get_mut(account_id)
            .ok_or_else(|| BankError::UnknownAccount(account_id.to_owned()))
    }

    /// Debits `amount` and relays the blinded batch to the mint. Signatures
    /// come back in batch order. The account is untouched on any error.
    pub fn process_withdrawal(
        &mut self,
        account_id: &str,
        amount: u64,
        blinded_batch: &[BlindedItem],
        mint: &mut Mint,
        ledger: &mut Sequencer,
    ) -> Result<Vec<BigUint>, BankError> {
        let balance = self.balance(account_id)?;
        let batch_total: u64 = blinded_batch.iter().map(|b| b.denomination).sum();
        if batch_total != amount {
            return Err(BankError::AmountMismatch { amount, batch_total });
        }
        if amount > balance {
            return Err(BankError::InsufficientFunds {
                balance,
                requested: amount,
            });
        }
        let sigs = mint.issue(&self.id, blinded_batch, ledger)?;
        self.account_mut(account_id)?.balance -= amount;
        self.withdrawals.push(WithdrawalRow {
            account_id: account_id.to_owned(),
            amount,
            tick: ledger.current_tick(),
            reversed: false,
        });
        Ok(sigs)
    }

    /// Undoes a withdrawal whose signatures failed to verify at the wallet:
    /// re-credits the account and voids the issuance at the mint.
    pub fn reverse_withdrawal(
        &mut self,
        account_id: &str,
        denomination_counts: &BTreeMap<u64, u64>,
        mint: &mut Mint,
    ) -> Result<u64, BankError> {
        self.balance(account_id)?;
        let amount: u64 = denomination_counts.iter().map(|(d, c)| d * c).sum();
        mint.void_issue(&self.id, denomination_counts)?;
        self.account_mut(account_id)?.balance += amount;
        if let Some(row) = self
            .withdrawals
            .iter_mut()
            .rev()
            .find(|w| w.account_id == account_id && w.amount == amount && !w.reversed)
        {
            row.reversed = true;
        }
        Ok(amount)
    }

    /// Takes assets a merchant received and moved to this bank, redeems them
    /// at the mint and credits the merchant.
    pub fn deposit_merchant(
        &mut self,
        merchant_account_id: &str,
        assets: &[Asset],
        mint: &mut Mint,
        ledger: &mut Sequencer,
    ) -> Result<u64, BankError> {
        let account = self
            .accounts
            .get(merchant_account_id)
            .ok_or_else(|| BankError::UnknownAccount(merchant_account_id.to_owned()))?;
        if account.holder_kind != HolderKind::Merchant {
            return Err(BankError::NotAMerchant(merchant_account_id.to_owned()));
        }
        if account.aml_record.trim().is_empty() {
            return Err(BankError::MissingIdentity);
        }
        let legal_identity = account.aml_record.clone();
        if assets.is_empty() {
            return Ok(0);
        }
        let bank_hash = self.key_hash();
        for a in assets {
            let n = a.history.len();
            let names_merchant = |i: usize| {
                a.history[i]
                    .invoice_ref
                    .as_ref()
                    .is_some_and(|r| r.merchant_id == merchant_account_id)
            };
            if n < 2 || a.history[n - 1].to_key_hash != bank_hash || !names_merchant(n - 1) || !names_merchant(n - 2) {
                return Err(BankError::WrongRecipient);
            }
        }
        let credited = mint.redeem(&self.id, assets, ledger)?;
        self.account_mut(merchant_account_id)?.balance += credited;
        self.aml_log.push(AmlRow {
            bank_id: self.id.clone(),
            merchant_account_id: merchant_account_id.to_owned(),
            legal_identity,
            amount: credited,
            tick: ledger.current_tick(),
        });
        Ok(credited)
    }

    /// Canonical JSON of the whole bank state, for audits.
    pub fn state_json(&self) -> String {
        serde_json::to_string(self).expect("bank state serializes")
    }
}

/// What a wallet needs from its bank during a withdrawal.
pub trait IssuanceChannel {
    fn current_tick(&self) -> Tick;

    fn withdraw(&mut self, account_id: &str, amount: u64, batch: &[BlindedItem]) -> Result<Vec<BigUint>, BankError>;

    fn reverse(&mut self, account_id: &str, denomination_counts: &BTreeMap<u64, u64>) -> Result<u64, BankError>;
}

/// The direct path: wallet → bank → mint → ledger, in one round trip.
pub struct BankChannel<'a> {
    pub bank: &'a mut Bank,
    pub mint: &'a mut Mint,
    pub ledger: &'a mut Sequencer,
}

impl IssuanceChannel for BankChannel<'_> {
    fn current_tick(&self) -> Tick {
        self.ledger.current_tick()
    }

    fn withdraw(&mut self, account_id: &str, amount: u64, batch: &[BlindedItem]) -> Result<Vec<BigUint>, BankError> {
        self.bank.process_withdrawal(account_id, amount, batch, self.mint, self.ledger)
    }

    fn reverse(&mut self, account_id: &str, denomination_counts: &BTreeMap<u64, u64>) -> Result<u64, BankError> {
        self.bank.reverse_withdrawal(account_id, denomination_counts, self.mint)
    }
}
