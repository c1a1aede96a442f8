//! End-of-run audits. Every audit is reported, passing or not.

use std::collections::{BTreeMap, BTreeSet};

use aho_corasick::AhoCorasick;
use cbdc_core::crypto::Digest;
use cbdc_core::ledger::{verify_chain, EntryKind};
use cbdc_core::merchant::InvoiceStatus;
use serde::{Deserialize, Serialize};

use crate::harness::Harness;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &str, failures: Vec<String>, ok_detail: String) -> AuditResult {
    AuditResult {
        name: name.to_owned(),
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            ok_detail
        } else {
            let shown: Vec<_> = failures.iter().take(5).cloned().collect();
            format!("{} violation(s): {}", failures.len(), shown.join("; "))
        },
    }
}

/// For each haystack containing any needle, the first needle found.
fn byte_matches(needles: &[String], haystacks: &[String]) -> Vec<String> {
    let needles: Vec<&String> = needles.iter().filter(|n| !n.is_empty()).collect();
    if needles.is_empty() {
        return Vec::new();
    }
    let ac = AhoCorasick::new(&needles).expect("needles compile");
    haystacks
        .iter()
        .filter_map(|h| ac.find(h).map(|m| needles[m.pattern().as_usize()].clone()))
        .collect()
}

fn conservation(h: &Harness) -> AuditResult {
    let failures = h
        .trail
        .conservation_failures
        .iter()
        .map(|(t, got)| format!("tick {t}: {got} != {}", h.initial_fiat))
        .collect();
    result(
        "conservation",
        failures,
        format!("{} ticks, fiat {}", h.trail.ticks_checked, h.initial_fiat),
    )
}

fn fiat_conservation(h: &Harness) -> AuditResult {
    let banks: u64 = h.banks.iter().map(|b| b.total_balances()).sum();
    let outstanding = h.mint.stats().outstanding_value;
    let mut failures = Vec::new();
    if banks + outstanding != h.initial_fiat {
        failures.push(format!("banks {banks} + outstanding {outstanding} != {}", h.initial_fiat));
    }
    result("fiat_conservation", failures, format!("banks {banks} + outstanding {outstanding}"))
}

fn mint_vs_holdings(h: &Harness) -> AuditResult {
    let outstanding = h.mint.stats().outstanding_value;
    let held: u64 = h.wallets.iter().map(|w| w.wallet.holdings_value()).sum::<u64>()
        + h.merchants.iter().map(|m| m.merchant.unredeemed_value()).sum::<u64>();
    let mut failures = Vec::new();
    if outstanding != held {
        failures.push(format!("outstanding {outstanding} != held {held}"));
    }
    result("mint_vs_holdings", failures, format!("{held} in circulation"))
}

fn double_spend(h: &Harness) -> AuditResult {
    let mut seen = BTreeSet::new();
    let mut failures = Vec::new();
    for (i, e) in h.sequencer.entries().iter().enumerate() {
        if let Some(n) = e.nullifier {
            if !seen.insert(n) {
                failures.push(format!("entry {i} repeats {:?}", n));
            }
        }
    }
    result("double_spend", failures, format!("{} distinct nullifiers", seen.len()))
}

fn hash_chain(h: &Harness) -> AuditResult {
    let log = h.sequencer.entries();
    let mut failures = Vec::new();
    if let Err(e) = verify_chain(log) {
        failures.push(e.to_string());
    }
    for v in &h.validators {
        let r = v.replica();
        if r.len() > log.len() || r != &log[..r.len()] {
            failures.push(format!("{} replica diverges", v.id()));
        }
    }
    result("hash_chain", failures, format!("{} entries", log.len()))
}

fn recipient_transparency(h: &Harness) -> AuditResult {
    let failures = h
        .sequencer
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.kind, EntryKind::Spend | EntryKind::Redemption) && e.recipient_id.is_empty())
        .map(|(i, _)| format!("entry {i} has no recipient"))
        .collect();
    result("recipient_transparency", failures, "every spend and redemption names its recipient".into())
}

fn payer_anonymity(h: &Harness) -> AuditResult {
    let ledger: Vec<String> = h
        .sequencer
        .entries()
        .iter()
        .map(|e| serde_json::to_string(e).expect("entry serializes"))
        .collect();
    let mut needles = h.sensitive_wallet_strings();
    needles.extend(h.wallets.iter().map(|w| w.name.clone()));
    let failures = byte_matches(&needles, &ledger)
        .into_iter()
        .map(|n| format!("ledger contains {n:?}"))
        .collect();
    result("payer_anonymity", failures, format!("{} entries scanned", ledger.len()))
}

fn pay_message_anonymity(h: &Harness) -> AuditResult {
    let failures: Vec<String> = byte_matches(&h.sensitive_wallet_strings(), &h.trail.captured)
        .into_iter()
        .map(|n| format!("message contains {}", &n[..n.len().min(24)]))
        .collect();
    result(
        "pay_message_anonymity",
        failures,
        format!("{} pay-flow messages scanned", h.trail.captured.len()),
    )
}

fn mint_bank_obliviousness(h: &Harness) -> AuditResult {
    let mut haystacks = vec![h.mint.state_json()];
    haystacks.extend(h.banks.iter().map(|b| b.state_json()));
    let needles: Vec<String> = h.trail.revealed.iter().cloned().collect();
    let failures = byte_matches(&needles, &haystacks)
        .into_iter()
        .map(|n| format!("issuer state contains {}", &n[..n.len().min(16)]))
        .collect();
    result(
        "mint_bank_obliviousness",
        failures,
        format!("{} revealed values checked", needles.len()),
    )
}

fn aml_completeness(h: &Harness) -> AuditResult {
    let mut failures = Vec::new();
    let mut rows = 0;
    for bank in &h.banks {
        let mut logged: BTreeMap<&str, u64> = BTreeMap::new();
        for row in bank.aml_log() {
            rows += 1;
            if row.legal_identity.trim().is_empty() {
                failures.push(format!("row for {} has no identity", row.merchant_account_id));
            }
            *logged.entry(&row.merchant_account_id).or_default() += row.amount;
        }
        for acct in bank.accounts() {
            if acct.holder_kind != cbdc_core::bank::HolderKind::Merchant {
                continue;
            }
            let l = logged.get(acct.account_id.as_str()).copied().unwrap_or(0);
            if l != acct.balance {
                failures.push(format!("{} credited {} but AML shows {l}", acct.account_id, acct.balance));
            }
        }
    }
    result("aml_completeness", failures, format!("{rows} AML rows"))
}

fn cooldown(h: &Harness) -> AuditResult {
    let c = h.config.cooldown_ticks;
    let failures = h
        .trail
        .certified
        .iter()
        .filter(|s| s.entry.tick < s.asset.issue_tick + c)
        .map(|s| format!("spent at {} issued at {}", s.entry.tick, s.asset.issue_tick))
        .collect();
    result("cooldown", failures, format!("{} certified spends", h.trail.certified.len()))
}

fn quorum_safety(h: &Harness) -> AuditResult {
    let set = h.validator_set();
    let log: BTreeSet<Digest> = h
        .sequencer
        .entries()
        .iter()
        .filter(|e| e.kind == EntryKind::Spend)
        .map(|e| e.entry_hash)
        .collect();
    let mut failures = Vec::new();
    let mut nullifiers = BTreeSet::new();
    for s in &h.trail.certified {
        if s.entry.nullifier.is_some_and(|n| !nullifiers.insert(n)) {
            failures.push(format!("two certificates for the nullifier of {}", s.entry.entry_hash));
        }
        if !set.verify_certificate(&s.certificate) || s.certificate.entry_hash != s.entry.entry_hash {
            failures.push(format!("certificate for {} is short", s.entry.entry_hash));
        }
        if !log.contains(&s.entry.entry_hash) {
            failures.push(format!("certified entry {} not in log", s.entry.entry_hash));
        }
    }
    result(
        "quorum_safety",
        failures,
        format!("{} certificates, K={}", h.trail.certified.len(), set.quorum),
    )
}

fn fresh_keys(h: &Harness) -> AuditResult {
    let mut keys = BTreeSet::new();
    let mut factors = BTreeSet::new();
    let mut failures = Vec::new();
    for w in &h.wallets {
        for k in w.wallet.generated_key_hashes() {
            if !keys.insert(*k) {
                failures.push(format!("owner key reused by {}", w.name));
            }
        }
        for f in w.wallet.generated_factor_digests() {
            if !factors.insert(*f) {
                failures.push(format!("blinding factor reused by {}", w.name));
            }
        }
    }
    result(
        "fresh_keys",
        failures,
        format!("{} keys, {} factors", keys.len(), factors.len()),
    )
}

fn wallet_no_loss(h: &Harness) -> AuditResult {
    let failures = h
        .wallets
        .iter()
        .filter(|w| w.wallet.holdings_value() != w.wallet.withdrawn_total() - w.wallet.paid_total())
        .map(|w| {
            format!(
                "{} holds {} but withdrew {} and paid {}",
                w.name,
                w.wallet.holdings_value(),
                w.wallet.withdrawn_total(),
                w.wallet.paid_total()
            )
        })
        .collect();
    result("wallet_no_loss", failures, format!("{} wallets", h.wallets.len()))
}

fn merchant_revenue(h: &Harness) -> AuditResult {
    let mut failures = Vec::new();
    for m in &h.merchants {
        let t = &m.merchant;
        let paid: u64 = t
            .invoices()
            .filter(|r| matches!(r.status, InvoiceStatus::Paid { .. }))
            .map(|r| r.invoice.amount)
            .sum();
        if paid != t.revenue() {
            failures.push(format!("{} revenue {} != paid invoices {paid}", m.name, t.revenue()));
        }
        if t.revenue() + t.custody_value() != t.deposited() + t.unredeemed_value() {
            failures.push(format!("{} received value does not match deposits plus holdings", m.name));
        }
        let credited = h.banks[m.bank].balance(t.id()).unwrap_or(0);
        if credited != t.deposited() {
            failures.push(format!("{} bank credit {credited} != deposited {}", m.name, t.deposited()));
        }
    }
    result("merchant_revenue", failures, format!("{} merchants", h.merchants.len()))
}

fn single_payment_per_invoice(h: &Harness) -> AuditResult {
    let mut failures: Vec<String> = h
        .trail
        .accepted
        .iter()
        .filter(|(_, n)| **n > 1)
        .map(|(r, n)| format!("{}/{} accepted {n} times", r.merchant_id, r.invoice_id))
        .collect();
    let paid = h
        .merchants
        .iter()
        .flat_map(|m| m.merchant.invoices())
        .filter(|r| matches!(r.status, InvoiceStatus::Paid { .. }))
        .count();
    if paid != h.trail.accepted.len() {
        failures.push(format!("{paid} paid invoices but {} accepted payments", h.trail.accepted.len()));
    }
    failures.extend(h.trail.custody_failures.iter().map(|c| format!("custody refused: {c}")));
    result("single_payment_per_invoice", failures, format!("{paid} invoices paid"))
}

pub fn run_audits(h: &Harness) -> Vec<AuditResult> {
    vec![
        conservation(h),
        fiat_conservation(h),
        mint_vs_holdings(h),
        double_spend(h),
        hash_chain(h),
        recipient_transparency(h),
        payer_anonymity(h),
        pay_message_anonymity(h),
        mint_bank_obliviousness(h),
        aml_completeness(h),
        cooldown(h),
        quorum_safety(h),
        fresh_keys(h),
        wallet_no_loss(h),
        merchant_revenue(h),
        single_payment_per_invoice(h),
    ]
}
