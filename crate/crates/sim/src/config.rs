//! Scenario configuration, as read from a JSON file.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use cbdc_core::crypto::SUPPORTED_KEY_BITS;
use cbdc_core::Tick;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown fault kind {0:?}")]
    UnknownFaultKind(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Invalid(_) => "ConfigInvalid",
            ConfigError::UnknownFaultKind(_) => "UnknownFaultKind",
        }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalletsConfig {
    pub count: usize,
    /// One entry per wallet, or a single entry applied to all.
    pub initial_balances: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorsConfig {
    pub n: usize,
    pub k: usize,
}

/// Per-message delay, drawn uniformly from `min..=max` ticks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyConfig {
    pub min: u64,
    pub max: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    /// Links between the sequencer and the listed validators are cut.
    Partition,
    /// Validator links drop messages with probability `rate`.
    DropSpike,
    /// The listed validators stop sending and receiving.
    ValidatorCrash,
}

impl FromStr for FaultKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "partition" => Ok(FaultKind::Partition),
            "drop-spike" => Ok(FaultKind::DropSpike),
            "validator-crash" => Ok(FaultKind::ValidatorCrash),
            other => Err(ConfigError::UnknownFaultKind(other.to_owned())),
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultKind::Partition => "partition",
            FaultKind::DropSpike => "drop-spike",
            FaultKind::ValidatorCrash => "validator-crash",
        })
    }
}

/// A fault active on `from_tick <= t < to_tick`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    #[serde(default)]
    pub validators: Vec<String>,
    #[serde(default)]
    pub rate: f64,
    pub from_tick: Tick,
    pub to_tick: Tick,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    /// Wallet withdraws from its linked account.
    Withdraw {
        amount: u64,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        corrupt_signature: bool,
    },
    /// Merchant issues an invoice, optionally handing it to a wallet.
    Invoice {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wallet: Option<String>,
        amount: u64,
    },
    /// Wallet pays the named invoice, or the oldest one handed to it.
    Pay {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        merchant: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        invoice_id: Option<String>,
    },
    /// Wallet pays two fresh invoices from two merchants with the same assets.
    DoubleSpend { merchants: Vec<String>, amount: u64 },
    /// Merchant deposits everything it holds.
    Deposit,
    Fault {
        kind: FaultKind,
        #[serde(default)]
        validators: Vec<String>,
        #[serde(default)]
        rate: f64,
        to_tick: Tick,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub tick: Tick,
    pub actor: String,
    #[serde(flatten)]
    pub action: Action,
}

fn d_banks() -> usize {
    1
}
fn d_cooldown() -> u64 {
    cbdc_core::ledger::DEFAULT_COOLDOWN_TICKS
}
fn d_timeout() -> u64 {
    cbdc_core::ledger::DEFAULT_QUORUM_TIMEOUT_TICKS
}
fn d_expiry() -> u64 {
    cbdc_core::merchant::DEFAULT_INVOICE_EXPIRY_TICKS
}
fn d_latency() -> LatencyConfig {
    LatencyConfig { min: 1, max: 1 }
}
fn d_key_bits() -> u32 {
    512
}
fn d_denoms() -> Vec<u64> {
    cbdc_core::DEFAULT_DENOMINATIONS.to_vec()
}
fn d_max_ticks() -> u64 {
    200
}
fn d_validators() -> ValidatorsConfig {
    ValidatorsConfig {
        n: cbdc_core::ledger::DEFAULT_VALIDATORS,
        k: cbdc_core::ledger::DEFAULT_QUORUM,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub wallets: WalletsConfig,
    pub merchants: usize,
    #[serde(default = "d_banks")]
    pub banks: usize,
    #[serde(default = "d_validators")]
    pub validators: ValidatorsConfig,
    #[serde(default = "d_cooldown")]
    pub cooldown_ticks: u64,
    #[serde(default = "d_timeout")]
    pub quorum_timeout_ticks: u64,
    #[serde(default = "d_expiry")]
    pub invoice_expiry_ticks: u64,
    #[serde(default = "d_latency")]
    pub latency: LatencyConfig,
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default = "d_key_bits")]
    pub key_bits: u32,
    #[serde(default = "d_denoms")]
    pub denominations: Vec<u64>,
    #[serde(default = "d_max_ticks")]
    pub max_ticks: u64,
    #[serde(default)]
    pub script: Vec<ScriptEvent>,
}

impl ScenarioConfig {
    /// A config with defaults everywhere except the population.
    pub fn basic(seed: u64, wallets: usize, balance: u64, merchants: usize) -> Self {
        ScenarioConfig {
            seed,
            wallets: WalletsConfig {
                count: wallets,
                initial_balances: vec![balance],
            },
            merchants,
            banks: d_banks(),
            validators: d_validators(),
            cooldown_ticks: d_cooldown(),
            quorum_timeout_ticks: d_timeout(),
            invoice_expiry_ticks: d_expiry(),
            latency: d_latency(),
            drop_rate: 0.0,
            key_bits: d_key_bits(),
            denominations: d_denoms(),
            max_ticks: d_max_ticks(),
            script: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let c: ScenarioConfig = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn initial_balance(&self, wallet: usize) -> u64 {
        match self.wallets.initial_balances.as_slice() {
            [one] => *one,
            all => all[wallet],
        }
    }

    pub fn wallet_name(i: usize) -> String {
        format!("wallet-{i}")
    }

    pub fn merchant_name(i: usize) -> String {
        format!("merchant-{i}")
    }

    pub fn validator_name(i: usize) -> String {
        format!("validator-{i}")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.validators;
        if v.n == 0 || v.k == 0 || v.k > v.n {
            return Err(invalid(format!("need 1 <= k <= n, got k={} n={}", v.k, v.n)));
        }
        if self.banks == 0 {
            return Err(invalid("at least one bank"));
        }
        let balances = self.wallets.initial_balances.len();
        if self.wallets.count > 0 && balances != 1 && balances != self.wallets.count {
            return Err(invalid("initial_balances must have one entry or one per wallet"));
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(invalid("drop_rate outside [0, 1]"));
        }
        if self.latency.min == 0 || self.latency.min > self.latency.max {
            return Err(invalid("latency needs 1 <= min <= max"));
        }
        if !SUPPORTED_KEY_BITS.contains(&self.key_bits) {
            return Err(invalid(format!("unsupported key_bits {}", self.key_bits)));
        }
        let denoms: BTreeSet<u64> = self.denominations.iter().copied().collect();
        if denoms.is_empty() || denoms.len() != self.denominations.len() || denoms.contains(&0) {
            return Err(invalid("denominations must be distinct and positive"));
        }
        if self.quorum_timeout_ticks == 0 || self.invoice_expiry_ticks == 0 {
            return Err(invalid("timeouts must be positive"));
        }
        let wallets: BTreeSet<String> = (0..self.wallets.count).map(Self::wallet_name).collect();
        let merchants: BTreeSet<String> = (0..self.merchants).map(Self::merchant_name).collect();
        let validators: BTreeSet<String> = (0..v.n).map(Self::validator_name).collect();
        let need = |set: &BTreeSet<String>, name: &str, what: &str| {
            if set.contains(name) {
                Ok(())
            } else {
                Err(invalid(format!("unknown {what} {name:?}")))
            }
        };
        for ev in &self.script {
            if ev.tick > self.max_ticks {
                return Err(invalid(format!("event at tick {} beyond max_ticks", ev.tick)));
            }
            match &ev.action {
                Action::Withdraw { .. } | Action::Pay { .. } | Action::DoubleSpend { .. } => {
                    need(&wallets, &ev.actor, "wallet")?
                }
                Action::Invoice { .. } | Action::Deposit => need(&merchants, &ev.actor, "merchant")?,
                Action::Fault { .. } => {}
            }
            match &ev.action {
                Action::Invoice { wallet: Some(w), .. } => need(&wallets, w, "wallet")?,
                Action::Pay { merchant: Some(m), .. } => need(&merchants, m, "merchant")?,
                Action::DoubleSpend { merchants: ms, .. } => {
                    if ms.len() != 2 || ms[0] == ms[1] {
                        return Err(invalid("double_spend needs two distinct merchants"));
                    }
                    for m in ms {
                        need(&merchants, m, "merchant")?;
                    }
                }
                Action::Fault { validators: vs, rate, to_tick, .. } => {
                    if *to_tick < ev.tick || !(0.0..=1.0).contains(rate) {
                        return Err(invalid("fault window or rate out of range"));
                    }
                    for name in vs {
                        need(&validators, name, "validator")?;
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_gets_defaults() {
        let c = ScenarioConfig::from_json(
            r#"{"seed": 42, "wallets": {"count": 1, "initial_balances": [100]}, "merchants": 1,
                "script": [
                  {"tick": 1, "actor": "wallet-0", "action": "withdraw", "amount": 37},
                  {"tick": 8, "actor": "merchant-0", "action": "invoice", "wallet": "wallet-0", "amount": 37},
                  {"tick": 9, "actor": "wallet-0", "action": "pay"}
                ]}"#,
        )
        .unwrap();
        assert_eq!(c.cooldown_ticks, 5);
        assert_eq!(c.validators, ValidatorsConfig { n: 3, k: 2 });
        assert_eq!(c.script.len(), 3);
        assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = ScenarioConfig::basic(1, 1, 10, 1);
        c.validators.k = 4;
        assert_eq!(c.validate().unwrap_err().code(), "ConfigInvalid");
        let mut c = ScenarioConfig::basic(1, 1, 10, 1);
        c.drop_rate = 1.5;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::basic(1, 1, 10, 1);
        c.script.push(ScriptEvent {
            tick: 1,
            actor: "wallet-7".into(),
            action: Action::Deposit,
        });
        assert!(c.validate().is_err());
        assert!(ScenarioConfig::from_json(r#"{"seed": 1}"#).is_err());
    }

    #[test]
    fn fault_kinds_parse() {
        assert_eq!("drop-spike".parse::<FaultKind>().unwrap(), FaultKind::DropSpike);
        assert_eq!("meteor".parse::<FaultKind>().unwrap_err().code(), "UnknownFaultKind");
    }
}
