use cbdc_core::ledger::LedgerError;
use cbdc_core::wallet::WalletError;
use cbdc_sim::config::LatencyConfig;
use cbdc_sim::{
    run_scenario, Action, ActionError, FaultKind, FaultSpec, Harness, PaymentStatus, RunReport, ScenarioConfig,
    ScriptEvent,
};

fn ev(tick: u64, actor: &str, action: Action) -> ScriptEvent {
    ScriptEvent {
        tick,
        actor: actor.into(),
        action,
    }
}

fn withdraw(amount: u64) -> Action {
    Action::Withdraw {
        amount,
        corrupt_signature: false,
    }
}

fn assert_audits(r: &RunReport) {
    let failed: Vec<_> = r.audits.iter().filter(|a| !a.passed).collect();
    assert!(failed.is_empty(), "seed {}: {failed:#?}", r.seed);
}

/// One wallet withdraws 37, waits out the cooldown and pays a merchant.
fn thirty_seven() -> ScenarioConfig {
    let mut c = ScenarioConfig::basic(42, 1, 100, 1);
    c.script = vec![
        ev(1, "wallet-0", withdraw(37)),
        ev(8, "merchant-0", Action::Invoice { wallet: Some("wallet-0".into()), amount: 37 }),
        ev(9, "wallet-0", Action::Pay { merchant: None, invoice_id: None }),
        ev(30, "merchant-0", Action::Deposit),
    ];
    c
}

#[test]
fn thirty_seven_reaches_the_merchant_account() {
    let r = run_scenario(thirty_seven()).unwrap();
    assert_audits(&r);
    let m = &r.balances.merchants["merchant-0"];
    assert_eq!((m.revenue, m.deposited, m.account_balance, m.unredeemed), (37, 37, 37, 0));
    let w = &r.balances.wallets["wallet-0"];
    assert_eq!((w.account_balance, w.wallet.total), (63, 0));
    assert_eq!(r.mint.outstanding_value, 0);
    assert_eq!(r.events.get("payment_certified"), Some(&1));
}

#[test]
fn paying_before_cooldown_tallies_hot_asset() {
    let mut c = thirty_seven();
    c.script[1].tick = 3;
    c.script[2].tick = 3;
    let r = run_scenario(c).unwrap();
    assert_eq!(r.errors.get("HotAsset"), Some(&1));
    assert_eq!(r.balances.merchants["merchant-0"].revenue, 0);
    assert_eq!(r.balances.wallets["wallet-0"].wallet.total, 37);
    assert_audits(&r);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    for seed in [3, 17, 42] {
        let a = run_scenario(ScenarioConfig::random(seed)).unwrap();
        let b = run_scenario(ScenarioConfig::random(seed)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }
    let a = run_scenario(ScenarioConfig::random(1)).unwrap();
    let b = run_scenario(ScenarioConfig::random(2)).unwrap();
    assert_ne!(a.ledger_digest, b.ledger_digest);
}

#[test]
fn random_scenarios_pass_every_audit() {
    for seed in 1..=8 {
        assert_audits(&run_scenario(ScenarioConfig::random(seed)).unwrap());
    }
}

#[test]
fn fresh_assets_are_refused_by_the_wallet() {
    let mut h = Harness::new(ScenarioConfig::basic(5, 1, 50, 1)).unwrap();
    h.withdraw("wallet-0", 20, false).unwrap();
    h.step();
    let inv = h.create_invoice("merchant-0", None, 20).unwrap();
    let err = h.pay("wallet-0", Some("merchant-0"), Some(&inv.invoice_id)).unwrap_err();
    assert_eq!(err.code(), "HotAsset");
    assert!(matches!(err, ActionError::Wallet(WalletError::HotAsset { spendable_at: 5 })));
    assert_eq!(h.balance("wallet-0").unwrap().hot, 20);

    h.step_n(4);
    let receipt = h.pay_and_settle("wallet-0", "merchant-0", &inv.invoice_id).unwrap();
    assert!(receipt.merchant_accepted);
    assert!(receipt.proof.spends.iter().all(|s| s.entry.tick >= s.asset.issue_tick + 5));
}

#[test]
fn latency_stretches_settlement() {
    let settle = |lat: u64| {
        let mut c = ScenarioConfig::basic(9, 1, 50, 1);
        c.latency = LatencyConfig { min: lat, max: lat };
        let mut h = Harness::new(c).unwrap();
        h.withdraw("wallet-0", 10, false).unwrap();
        h.step_n(5);
        let inv = h.create_invoice("merchant-0", None, 10).unwrap();
        let start = h.tick();
        h.pay_and_settle("wallet-0", "merchant-0", &inv.invoice_id).unwrap().tick - start
    };
    let fast = settle(1);
    let slow = settle(2);
    // Spend, proposal, ack and outcome each take one hop.
    assert!(fast >= 4, "{fast}");
    assert_eq!(slow, 2 * fast);
}

fn crash(h: &mut Harness, validators: &[&str], to_tick: u64) {
    h.inject_fault(FaultSpec {
        kind: FaultKind::ValidatorCrash,
        validators: validators.iter().map(|v| v.to_string()).collect(),
        rate: 0.0,
        from_tick: h.tick(),
        to_tick,
    })
    .unwrap();
}

/// Six withdrawals of 7, so payments of 7 never need change.
fn funded(seed: u64) -> Harness {
    let mut h = Harness::new(ScenarioConfig::basic(seed, 1, 200, 1)).unwrap();
    for _ in 0..6 {
        h.withdraw("wallet-0", 7, false).unwrap();
    }
    h.step_n(5);
    h
}

#[test]
fn one_crashed_validator_of_three_is_tolerated() {
    let mut h = funded(11);
    crash(&mut h, &["validator-2"], 1000);
    for _ in 0..5 {
        let inv = h.create_invoice("merchant-0", None, 7).unwrap();
        let receipt = h.pay_and_settle("wallet-0", "merchant-0", &inv.invoice_id).unwrap();
        assert!(receipt.merchant_accepted);
        for s in &receipt.proof.spends {
            assert!(s.certificate.acks.iter().all(|a| a.validator_id != "validator-2"));
        }
    }
}

#[test]
fn two_crashed_validators_time_out_and_release_assets() {
    let mut h = funded(12);
    let until = h.tick() + 15;
    crash(&mut h, &["validator-0", "validator-1"], until);
    let inv = h.create_invoice("merchant-0", None, 7).unwrap();
    let err = h.pay_and_settle("wallet-0", "merchant-0", &inv.invoice_id).unwrap_err();
    assert!(matches!(err, ActionError::Wallet(WalletError::Ledger(LedgerError::QuorumTimeout))));
    let b = h.balance("wallet-0").unwrap();
    assert_eq!((b.total, b.in_flight), (42, 0));

    while h.tick() < until {
        h.step();
    }
    let inv = h.create_invoice("merchant-0", None, 7).unwrap();
    assert!(h.pay_and_settle("wallet-0", "merchant-0", &inv.invoice_id).unwrap().merchant_accepted);
    assert_audits(&RunReport::from_harness(&h));
}

#[test]
fn corrupted_issuance_is_rejected_and_refunded() {
    let mut h = Harness::new(ScenarioConfig::basic(13, 1, 80, 1)).unwrap();
    let err = h.withdraw("wallet-0", 30, true).unwrap_err();
    assert_eq!(err.code(), "VerificationFailed");
    let b = h.balance("wallet-0").unwrap();
    assert_eq!(b.total, 0);
    let r = RunReport::from_harness(&h);
    assert_eq!(r.balances.wallets["wallet-0"].account_balance, 80);
    assert_eq!(r.mint.outstanding_value, 0);
    assert_audits(&r);
}

#[test]
fn double_spend_settles_exactly_once() {
    let mut c = ScenarioConfig::basic(14, 1, 100, 2);
    c.script = vec![
        ev(0, "wallet-0", withdraw(10)),
        ev(
            6,
            "wallet-0",
            Action::DoubleSpend {
                merchants: vec!["merchant-0".into(), "merchant-1".into()],
                amount: 10,
            },
        ),
    ];
    let mut h = Harness::new(c).unwrap();
    h.run_to_end();
    let statuses: Vec<&PaymentStatus> = h.merchants().iter().flat_map(|m| {
        let refs: Vec<_> = m.merchant.invoices().map(|r| r.invoice.invoice_ref()).collect();
        refs.into_iter().filter_map(|r| h.payment_status("wallet-0", &r)).collect::<Vec<_>>()
    }).collect();
    assert_eq!(statuses.len(), 2);
    let settled = statuses.iter().filter(|s| matches!(s, PaymentStatus::Settled { .. })).count();
    let spent = statuses
        .iter()
        .filter(|s| matches!(s, PaymentStatus::Failed(WalletError::Ledger(LedgerError::AlreadySpent))))
        .count();
    assert_eq!((settled, spent), (1, 1));
    assert_audits(&RunReport::from_harness(&h));
}

#[test]
fn recorded_script_replays_to_the_same_ledger() {
    let mut h = funded(15);
    let inv = h.create_invoice("merchant-0", None, 14).unwrap();
    h.pay_and_settle("wallet-0", "merchant-0", &inv.invoice_id).unwrap();
    h.step();
    h.deposit("merchant-0").unwrap();
    let mut c = h.config().clone();
    c.script = h.recorded_script().to_vec();
    let mut replay = Harness::new(c).unwrap();
    replay.step_n(h.tick());
    assert_eq!(replay.ledger_head(), h.ledger_head());
}

#[test]
fn config_roundtrips_through_json() {
    let c = ScenarioConfig::random(21);
    assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
}
