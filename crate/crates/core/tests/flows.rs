//! Withdraw, pay and deposit through the public API of every actor.

use cbdc_core::bank::{Bank, BankChannel, HolderKind};
use cbdc_core::crypto::OwnerKey;
use cbdc_core::ledger::{verify_chain, EntryKind, LocalCluster};
use cbdc_core::merchant::Merchant;
use cbdc_core::mint::Mint;
use cbdc_core::rng::SeededStream;
use cbdc_core::wallet::Wallet;
use proptest::prelude::*;
use rand::Rng;

struct World {
    bank: Bank,
    mint: Mint,
    cluster: LocalCluster,
    wallets: Vec<Wallet>,
    merchant: Merchant,
}

fn world(seed: u64, wallets: usize, opening: u64) -> World {
    let mut mint = Mint::new(&cbdc_core::DEFAULT_DENOMINATIONS, 512, &mut SeededStream::derive(seed, "mint")).unwrap();
    let mut bank = Bank::new("bank-0", OwnerKey::generate(&mut SeededStream::derive(seed, "bank-0")));
    mint.register_bank("bank-0", bank.public_key()).unwrap();
    let mut cluster = LocalCluster::new(3, 2, mint.directory(), 5, seed);
    cluster.sequencer.register_bank("bank-0", bank.key_hash());
    let wallets = (0..wallets)
        .map(|i| {
            let acct = bank.open_account(HolderKind::Consumer, &format!("Holder {i}"), opening).unwrap();
            Wallet::new(&format!("wallet-{i}"), &acct, SeededStream::derive(seed, &format!("stream/wallet-{i}")), mint.directory(), 5)
        })
        .collect();
    let m = bank.open_account(HolderKind::Merchant, "Shop Ltd", 0).unwrap();
    let merchant = Merchant::new(&m, &mut SeededStream::derive(seed, "merchant-0"), cluster.sequencer.config().validators.clone(), mint.directory(), 20);
    World { bank, mint, cluster, wallets, merchant }
}

fn withdraw(w: &mut World, i: usize, amount: u64) {
    let mut ch = BankChannel { bank: &mut w.bank, mint: &mut w.mint, ledger: &mut w.cluster.sequencer };
    w.wallets[i].withdraw(amount, &mut ch).unwrap();
}

#[test]
fn mint_and_bank_never_see_revealed_material_over_500_withdrawals() {
    let mut w = world(500, 10, 10_000);
    let mut rng = SeededStream::seeded(500);
    for n in 0..500 {
        withdraw(&mut w, n % 10, rng.gen_range(1..=60));
    }
    let transcript = serde_json::to_string(w.mint.transcript()).unwrap();
    let bank_state = w.bank.state_json();
    let mut checked = 0;
    for wallet in &w.wallets {
        for h in wallet.holdings() {
            let revealed = [
                h.asset.serial.to_hex(),
                h.asset.genesis_owner_hash.to_hex(),
                h.asset.genesis_signature.to_str_radix(16),
            ];
            for needle in &revealed {
                assert!(!transcript.contains(needle.as_str()));
                assert!(!bank_state.contains(needle.as_str()));
            }
            checked += 1;
        }
    }
    assert!(checked >= 500);
    assert_eq!(w.mint.transcript().len(), checked);
}

#[test]
fn full_cycle_conserves_fiat_and_keeps_chain() {
    let mut w = world(7, 2, 100);
    withdraw(&mut w, 0, 37);
    withdraw(&mut w, 1, 63);
    w.cluster.advance(5);
    for (i, amount) in [(0usize, 37u64), (1, 50), (1, 13)] {
        let inv = w.merchant.create_invoice(amount, w.cluster.sequencer.current_tick()).unwrap();
        let proof = w.wallets[i].pay_local(&inv, &mut w.cluster).unwrap();
        w.merchant.accept_payment(&proof).unwrap();
        let in_wallets: u64 = w.wallets.iter().map(Wallet::holdings_value).sum();
        assert_eq!(w.bank.total_balances() + in_wallets + w.merchant.unredeemed_value(), 200);
    }
    assert_eq!(w.merchant.deposit(&mut w.bank, &mut w.mint, &mut w.cluster.sequencer).unwrap(), 100);
    assert_eq!(w.bank.total_balances(), 200);
    assert_eq!(w.mint.stats().outstanding_value, 0);
    let entries = w.cluster.sequencer.entries();
    verify_chain(entries).unwrap();
    assert!(entries
        .iter()
        .filter(|e| e.kind != EntryKind::IssueBatch)
        .all(|e| !e.recipient_id.is_empty()));
}

#[test]
fn one_validator_down_still_commits() {
    let mut w = world(8, 1, 100);
    withdraw(&mut w, 0, 30);
    w.cluster.advance(5);
    w.cluster.down.insert("validator-2".into());
    let inv = w.merchant.create_invoice(30, w.cluster.sequencer.current_tick()).unwrap();
    let proof = w.wallets[0].pay_local(&inv, &mut w.cluster).unwrap();
    assert!(proof.spends.iter().all(|s| s.certificate.acks.len() == 2));
    w.merchant.accept_payment(&proof).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn wallet_state_survives_persist_and_load(amounts in proptest::collection::vec(1u64..80, 0..4), seed in 0u64..1000) {
        let mut w = world(seed, 1, 400);
        for a in &amounts {
            withdraw(&mut w, 0, *a);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wallet.json");
        w.wallets[0].persist(&path).unwrap();
        let loaded = Wallet::load(&path).unwrap();
        prop_assert_eq!(&loaded, &w.wallets[0]);
        prop_assert_eq!(loaded.holdings_value(), amounts.iter().sum::<u64>());
    }
}
