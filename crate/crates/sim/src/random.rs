//! Seeded random scenarios for property-style runs.

use cbdc_core::rng::SeededStream;
use rand::Rng;

use crate::config::{Action, FaultKind, LatencyConfig, ScenarioConfig, ScriptEvent, WalletsConfig};

impl ScenarioConfig {
    /// A random but valid scenario: up to 10 wallets, 5 merchants and 200
    /// ticks, with withdrawals, payments, deposits and the occasional
    /// premature payment, double spend or validator crash.
    pub fn random(seed: u64) -> ScenarioConfig {
        let mut rng = SeededStream::derive(seed, "scenario");
        let wallets = rng.gen_range(1..=10usize);
        let merchants = rng.gen_range(1..=5usize);
        let balances: Vec<u64> = (0..wallets).map(|_| rng.gen_range(40..=300)).collect();

        let mut c = ScenarioConfig::basic(seed, wallets, 0, merchants);
        c.wallets = WalletsConfig {
            count: wallets,
            initial_balances: balances.clone(),
        };
        c.banks = rng.gen_range(1..=2);
        c.latency = LatencyConfig {
            min: 1,
            max: rng.gen_range(1..=3),
        };
        c.drop_rate = if rng.gen_bool(0.3) { 0.05 } else { 0.0 };
        c.max_ticks = rng.gen_range(80..=200);

        let end = c.max_ticks;
        let wallet = |i: usize| ScenarioConfig::wallet_name(i);
        let merchant = |i: usize| ScenarioConfig::merchant_name(i);
        let mut script = Vec::new();
        let mut push = |tick, actor: String, action| script.push(ScriptEvent { tick, actor, action });
        let withdraw = |amount| Action::Withdraw {
            amount,
            corrupt_signature: false,
        };

        // Assets carry fixed denominations and wallets cannot make change, so
        // most payments get a matching withdrawal ahead of time.
        for (i, &b) in balances.iter().enumerate() {
            let opening = rng.gen_range(b / 4..=b / 2);
            push(rng.gen_range(0..=3), wallet(i), withdraw(opening));
            let mut left = b - opening;
            for _ in 0..rng.gen_range(1..=4) {
                let amount = rng.gen_range(1..=25).min(left);
                if amount == 0 {
                    break;
                }
                let t = rng.gen_range(c.cooldown_ticks + 3..end - 40);
                if rng.gen_bool(0.8) {
                    left -= amount;
                    push(rng.gen_range(0..t - c.cooldown_ticks), wallet(i), withdraw(amount));
                }
                let m = merchant(rng.gen_range(0..merchants));
                push(t, m.clone(), Action::Invoice { wallet: Some(wallet(i)), amount });
                push(
                    t + rng.gen_range(0..=2),
                    wallet(i),
                    Action::Pay {
                        merchant: Some(m),
                        invoice_id: None,
                    },
                );
            }
        }

        if rng.gen_bool(0.3) {
            // Fresh assets paid one tick after issue.
            let i = rng.gen_range(0..wallets);
            let t = rng.gen_range(10..end - 40);
            let m = merchant(rng.gen_range(0..merchants));
            push(t, wallet(i), withdraw(5));
            push(t + 1, m.clone(), Action::Invoice { wallet: Some(wallet(i)), amount: 5 });
            push(t + 1, wallet(i), Action::Pay { merchant: Some(m), invoice_id: None });
        }

        if merchants >= 2 && rng.gen_bool(0.3) {
            let i = rng.gen_range(0..wallets);
            let a = rng.gen_range(0..merchants);
            let b = (a + rng.gen_range(1..merchants)) % merchants;
            let t = rng.gen_range(c.cooldown_ticks + 3..end - 40);
            let amount = rng.gen_range(1..=10);
            push(t - c.cooldown_ticks - 1, wallet(i), withdraw(amount));
            push(
                t,
                wallet(i),
                Action::DoubleSpend {
                    merchants: vec![merchant(a), merchant(b)],
                    amount,
                },
            );
        }

        if rng.gen_bool(0.3) {
            let t = rng.gen_range(5..end - 40);
            let v = rng.gen_range(0..c.validators.n);
            push(
                t,
                "network".into(),
                Action::Fault {
                    kind: FaultKind::ValidatorCrash,
                    validators: vec![ScenarioConfig::validator_name(v)],
                    rate: 0.0,
                    to_tick: t + rng.gen_range(5..=30),
                },
            );
        }

        for m in 0..merchants {
            push(rng.gen_range(20..end - 20), merchant(m), Action::Deposit);
            push(end - 10, merchant(m), Action::Deposit);
        }

        script.sort_by_key(|e| e.tick);
        c.script = script;
        debug_assert!(c.validate().is_ok());
        c
    }
}
