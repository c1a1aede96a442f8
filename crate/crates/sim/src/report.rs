use std::collections::BTreeMap;

use cbdc_core::mint::MintStats;
use cbdc_core::wallet::Balance;
use cbdc_core::Tick;
use serde::{Deserialize, Serialize};

use crate::audit::{run_audits, AuditResult};
use crate::harness::Harness;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalletSummary {
    pub account_balance: u64,
    pub wallet: Balance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerchantSummary {
    pub account_id: String,
    pub account_balance: u64,
    pub unredeemed: u64,
    pub revenue: u64,
    pub custody: u64,
    pub deposited: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Balances {
    /// Σ account balances per bank.
    pub banks: BTreeMap<String, u64>,
    pub wallets: BTreeMap<String, WalletSummary>,
    pub merchants: BTreeMap<String, MerchantSummary>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub final_tick: Tick,
    pub ledger_digest: String,
    pub ledger_entries: usize,
    pub initial_fiat: u64,
    pub balances: Balances,
    pub mint: MintStats,
    pub audits: Vec<AuditResult>,
    pub events: BTreeMap<String, u64>,
    pub errors: BTreeMap<String, u64>,
    pub network: BTreeMap<String, u64>,
    pub all_audits_passed: bool,
}

impl RunReport {
    pub fn from_harness(h: &Harness) -> Self {
        let now = h.tick();
        let audits = run_audits(h);
        let balances = Balances {
            banks: h
                .banks()
                .iter()
                .map(|b| (b.id().to_owned(), b.total_balances()))
                .collect(),
            wallets: h
                .wallets()
                .iter()
                .map(|w| {
                    let account_balance = h.banks()[w.bank].balance(w.wallet.linked_account()).unwrap_or(0);
                    (
                        w.name.clone(),
                        WalletSummary {
                            account_balance,
                            wallet: w.wallet.balance(now),
                        },
                    )
                })
                .collect(),
            merchants: h
                .merchants()
                .iter()
                .map(|m| {
                    let t = &m.merchant;
                    (
                        m.name.clone(),
                        MerchantSummary {
                            account_id: t.id().to_owned(),
                            account_balance: h.banks()[m.bank].balance(t.id()).unwrap_or(0),
                            unredeemed: t.unredeemed_value(),
                            revenue: t.revenue(),
                            custody: t.custody_value(),
                            deposited: t.deposited(),
                        },
                    )
                })
                .collect(),
        };
        let net = h.network_stats();
        RunReport {
            seed: h.config().seed,
            final_tick: now,
            ledger_digest: h.sequencer().ledger_digest().to_hex(),
            ledger_entries: h.sequencer().entries().len(),
            initial_fiat: h.initial_fiat(),
            balances,
            mint: h.mint_stats(),
            all_audits_passed: audits.iter().all(|a| a.passed),
            audits,
            events: h.event_counts().clone(),
            errors: h.error_tally().clone(),
            network: [
                ("sent".to_owned(), net.sent),
                ("delivered".to_owned(), net.delivered),
                ("dropped".to_owned(), net.dropped),
            ]
            .into(),
        }
    }

    pub fn audit(&self, name: &str) -> Option<&AuditResult> {
        self.audits.iter().find(|a| a.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
