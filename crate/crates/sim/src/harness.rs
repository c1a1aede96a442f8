//! The discrete-event loop that wires every actor together.
//!
//! Withdrawals and deposits run synchronously inside one event (wallet → bank
//! → mint → ledger). Spends travel over the simulated [`Network`]: wallet to
//! sequencer, sequencer to validators and back, and the outcome back to the
//! wallet. When a certified outcome arrives the wallet hands the proof to the
//! merchant in the same event, so value is never in two places, nor in none.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use cbdc_core::asset::InvoiceRef;
use cbdc_core::bank::{Bank, BankChannel, BankError, HolderKind, IssuanceChannel};
use cbdc_core::crypto::{Digest, OwnerKey};
use cbdc_core::ledger::{
    BundleOutcome, CertifiedSpend, LedgerConfig, LedgerOutput, ReplyTo, Sequencer, Validator, ValidatorSet,
    DEFAULT_RETRANSMIT_TICKS,
};
use cbdc_core::merchant::{Invoice, Merchant, MerchantError, PaymentProof};
use cbdc_core::mint::{BlindedItem, Mint, MintError, MintStats};
use cbdc_core::rng::SeededStream;
use cbdc_core::wallet::{Balance, Wallet, WalletError, WithdrawReceipt};
use cbdc_core::Tick;
use num_bigint::BigUint;
use serde::Serialize;
use thiserror::Error;

use crate::config::{Action, ConfigError, FaultSpec, ScenarioConfig, ScriptEvent};
use crate::network::{Message, Network, NetworkStats};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("no actor named {0:?}")]
    UnknownActor(String),
    #[error("no invoice waiting for this wallet")]
    NoInvoice,
    #[error("payment did not settle within {0} ticks")]
    NotSettled(u64),
    #[error(transparent)]
    Wallet(#[from] WalletError),
    #[error(transparent)]
    Merchant(#[from] MerchantError),
    #[error(transparent)]
    Mint(#[from] MintError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl ActionError {
    pub fn code(&self) -> &'static str {
        match self {
            ActionError::UnknownActor(_) => "UnknownActor",
            ActionError::NoInvoice => "NoInvoice",
            ActionError::NotSettled(_) => "NotSettled",
            ActionError::Wallet(e) => e.code(),
            ActionError::Merchant(e) => e.code(),
            ActionError::Mint(e) => e.code(),
            ActionError::Config(e) => e.code(),
        }
    }
}

pub struct WalletActor {
    pub name: String,
    pub wallet: Wallet,
    pub bank: usize,
    pub inbox: VecDeque<Invoice>,
}

pub struct MerchantActor {
    pub name: String,
    pub merchant: Merchant,
    pub bank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PaymentStatus {
    Pending,
    Settled {
        proof: PaymentProof,
        merchant_result: Result<u64, MerchantError>,
    },
    Failed(WalletError),
}

/// What a settled payment looks like from the outside.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PaymentReceipt {
    pub proof: PaymentProof,
    pub merchant_accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merchant_error: Option<String>,
    pub tick: Tick,
}

/// Evidence collected while running, consumed by the audits.
#[derive(Default)]
pub(crate) struct Trail {
    pub conservation_failures: Vec<(Tick, u64)>,
    pub ticks_checked: u64,
    /// Serialized pay-flow messages: bundles, outcomes, proofs.
    pub captured: Vec<String>,
    /// Hex of every serial, owner hash and unblinded signature revealed.
    pub revealed: BTreeSet<String>,
    pub certified: Vec<CertifiedSpend>,
    pub accepted: BTreeMap<InvoiceRef, u32>,
    pub custody_failures: Vec<String>,
}

/// Signs honestly, then corrupts the first signature on its way back.
struct Corrupting<'a>(BankChannel<'a>);

impl IssuanceChannel for Corrupting<'_> {
    fn current_tick(&self) -> Tick {
        self.0.current_tick()
    }

    fn withdraw(&mut self, account: &str, amount: u64, batch: &[BlindedItem]) -> Result<Vec<BigUint>, BankError> {
        let mut sigs = self.0.withdraw(account, amount, batch)?;
        if let Some(s) = sigs.first_mut() {
            *s += 1u32;
        }
        Ok(sigs)
    }

    fn reverse(&mut self, account: &str, counts: &BTreeMap<u64, u64>) -> Result<u64, BankError> {
        self.0.reverse(account, counts)
    }
}

pub struct Harness {
    pub(crate) config: ScenarioConfig,
    pub(crate) mint: Mint,
    pub(crate) banks: Vec<Bank>,
    pub(crate) sequencer: Sequencer,
    pub(crate) validators: Vec<Validator>,
    pub(crate) wallets: Vec<WalletActor>,
    pub(crate) merchants: Vec<MerchantActor>,
    pub(crate) network: Network,
    script: VecDeque<ScriptEvent>,
    routes: BTreeMap<ReplyTo, (usize, InvoiceRef)>,
    next_route: u64,
    pub(crate) payments: BTreeMap<(usize, InvoiceRef), PaymentStatus>,
    pub(crate) initial_fiat: u64,
    pub(crate) trail: Trail,
    pub(crate) events: BTreeMap<String, u64>,
    pub(crate) errors: BTreeMap<String, u64>,
    recorded: Vec<ScriptEvent>,
}

impl Harness {
    /// Builds every actor from `config` and runs the tick-0 script events.
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let seed = config.seed;
        let stream = |name: &str| SeededStream::derive(seed, name);

        let mut mint = Mint::new(&config.denominations, config.key_bits, &mut stream("mint"))
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mint_keys = mint.directory();

        let validators: Vec<Validator> = (0..config.validators.n)
            .map(|i| {
                let id = ScenarioConfig::validator_name(i);
                let key = OwnerKey::generate(&mut stream(&id));
                Validator::new(&id, key, mint_keys.clone(), config.cooldown_ticks)
            })
            .collect();
        let validator_set = ValidatorSet {
            validators: validators.iter().map(Validator::info).collect(),
            quorum: config.validators.k,
        };
        let mut sequencer = Sequencer::new(
            LedgerConfig {
                validators: validator_set.clone(),
                cooldown_ticks: config.cooldown_ticks,
                quorum_timeout_ticks: config.quorum_timeout_ticks,
                retransmit_ticks: DEFAULT_RETRANSMIT_TICKS,
            },
            mint_keys.clone(),
        );
        let mut banks = Vec::new();
        for b in 0..config.banks {
            let id = format!("bank-{b}");
            let bank = Bank::new(&id, OwnerKey::generate(&mut stream(&id)));
            mint.register_bank(&id, bank.public_key())
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            sequencer.register_bank(&id, bank.key_hash());
            banks.push(bank);
        }

        let mut h = Harness {
            network: Network::new(stream("network"), config.latency, config.drop_rate),
            mint,
            banks,
            sequencer,
            validators,
            wallets: Vec::new(),
            merchants: Vec::new(),
            script: VecDeque::new(),
            routes: BTreeMap::new(),
            next_route: 0,
            payments: BTreeMap::new(),
            initial_fiat: 0,
            trail: Trail::default(),
            events: BTreeMap::new(),
            errors: BTreeMap::new(),
            recorded: Vec::new(),
            config: config.clone(),
        };

        for i in 0..config.wallets.count {
            let name = ScenarioConfig::wallet_name(i);
            let bank = i % config.banks;
            let balance = config.initial_balance(i);
            let account = h.banks[bank]
                .open_account(HolderKind::Consumer, &format!("Consumer {i}"), balance)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            h.initial_fiat += balance;
            let mut wallet = Wallet::new(
                &name,
                &account,
                stream(&format!("stream/{name}")),
                mint_keys.clone(),
                config.cooldown_ticks,
            );
            wallet.enable_audit_tap();
            h.wallets.push(WalletActor {
                name,
                wallet,
                bank,
                inbox: VecDeque::new(),
            });
        }
        for j in 0..config.merchants {
            let name = ScenarioConfig::merchant_name(j);
            let bank = j % config.banks;
            let account = h.banks[bank]
                .open_account(HolderKind::Merchant, &format!("Merchant {j} Ltd"), 0)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            let merchant = Merchant::new(
                &account,
                &mut stream(&name),
                validator_set.clone(),
                mint_keys.clone(),
                config.invoice_expiry_ticks,
            );
            h.merchants.push(MerchantActor { name, merchant, bank });
        }

        let mut script = config.script.clone();
        script.sort_by_key(|e| e.tick);
        h.script = script.into();
        h.run_script_events(0);
        h.audit_tick(0);
        Ok(h)
    }

    // -- accessors ---------------------------------------------------------

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn tick(&self) -> Tick {
        self.sequencer.current_tick()
    }

    pub fn sequencer(&self) -> &Sequencer {
        &self.sequencer
    }

    pub fn validators(&self) -> &[Validator] {
        &self.validators
    }

    pub fn mint(&self) -> &Mint {
        &self.mint
    }

    pub fn mint_stats(&self) -> MintStats {
        self.mint.stats()
    }

    pub fn banks(&self) -> &[Bank] {
        &self.banks
    }

    pub fn wallets(&self) -> &[WalletActor] {
        &self.wallets
    }

    pub fn merchants(&self) -> &[MerchantActor] {
        &self.merchants
    }

    pub fn network_stats(&self) -> NetworkStats {
        self.network.stats
    }

    pub fn initial_fiat(&self) -> u64 {
        self.initial_fiat
    }

    /// Number of ticks at which conservation has been checked.
    pub fn ticks_audited(&self) -> u64 {
        self.trail.ticks_checked
    }

    pub fn ledger_head(&self) -> (Digest, Tick) {
        (self.sequencer.ledger_digest(), self.tick())
    }

    pub fn error_tally(&self) -> &BTreeMap<String, u64> {
        &self.errors
    }

    pub fn event_counts(&self) -> &BTreeMap<String, u64> {
        &self.events
    }

    /// Every action executed so far, scripted or interactive, as script events.
    pub fn recorded_script(&self) -> &[ScriptEvent] {
        &self.recorded
    }

    /// Σ bank balances + Σ wallet holdings + Σ merchant unredeemed.
    pub fn fiat_in_system(&self) -> u64 {
        self.banks.iter().map(Bank::total_balances).sum::<u64>()
            + self.wallets.iter().map(|w| w.wallet.holdings_value()).sum::<u64>()
            + self.merchants.iter().map(|m| m.merchant.unredeemed_value()).sum::<u64>()
    }

    pub fn payment_status(&self, wallet: &str, invoice_ref: &InvoiceRef) -> Option<&PaymentStatus> {
        let wi = self.wallet_index(wallet).ok()?;
        self.payments.get(&(wi, invoice_ref.clone()))
    }

    pub fn wallet_index(&self, name: &str) -> Result<usize, ActionError> {
        self.wallets
            .iter()
            .position(|w| w.name == name)
            .ok_or_else(|| ActionError::UnknownActor(name.to_owned()))
    }

    pub fn merchant_index(&self, name: &str) -> Result<usize, ActionError> {
        self.merchants
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| ActionError::UnknownActor(name.to_owned()))
    }

    fn merchant_by_id(&self, merchant_id: &str) -> Option<usize> {
        self.merchants.iter().position(|m| m.merchant.id() == merchant_id)
    }

    /// Actor name of the merchant whose account id appears on invoices.
    pub fn merchant_name_for(&self, merchant_id: &str) -> Option<&str> {
        self.merchant_by_id(merchant_id).map(|i| self.merchants[i].name.as_str())
    }

    pub fn balance(&self, wallet: &str) -> Result<Balance, ActionError> {
        let wi = self.wallet_index(wallet)?;
        Ok(self.wallets[wi].wallet.balance(self.tick()))
    }

    // -- bookkeeping -------------------------------------------------------

    fn count(&mut self, event: &str) {
        *self.events.entry(event.to_owned()).or_default() += 1;
    }

    fn tally(&mut self, code: &str) {
        *self.errors.entry(code.to_owned()).or_default() += 1;
    }

    fn record(&mut self, actor: &str, action: Action) {
        self.recorded.push(ScriptEvent {
            tick: self.tick(),
            actor: actor.to_owned(),
            action,
        });
    }

    fn capture<T: Serialize>(&mut self, msg: &T) {
        self.trail
            .captured
            .push(serde_json::to_string(msg).expect("message serializes"));
    }

    fn reveal_holdings(&mut self, wi: usize) {
        for h in self.wallets[wi].wallet.holdings() {
            let a = &h.asset;
            self.trail.revealed.insert(a.serial.to_hex());
            self.trail.revealed.insert(a.genesis_owner_hash.to_hex());
            self.trail.revealed.insert(a.genesis_signature.to_str_radix(16));
        }
    }

    fn audit_tick(&mut self, now: Tick) {
        self.trail.ticks_checked += 1;
        let total = self.fiat_in_system();
        if total != self.initial_fiat {
            self.trail.conservation_failures.push((now, total));
        }
    }

    // -- actions -----------------------------------------------------------

    pub fn withdraw(&mut self, wallet: &str, amount: u64, corrupt_signature: bool) -> Result<WithdrawReceipt, ActionError> {
        let wi = self.wallet_index(wallet)?;
        self.record(
            wallet,
            Action::Withdraw {
                amount,
                corrupt_signature,
            },
        );
        self.count("withdraw");
        let Harness {
            wallets,
            banks,
            mint,
            sequencer,
            ..
        } = self;
        let actor = &mut wallets[wi];
        let channel = BankChannel {
            bank: &mut banks[actor.bank],
            mint,
            ledger: sequencer,
        };
        let result = if corrupt_signature {
            actor.wallet.withdraw(amount, &mut Corrupting(channel))
        } else {
            let mut channel = channel;
            actor.wallet.withdraw(amount, &mut channel)
        };
        match result {
            Ok(r) => {
                self.reveal_holdings(wi);
                Ok(r)
            }
            Err(e) => {
                self.tally(e.code());
                Err(e.into())
            }
        }
    }

    /// Issues an invoice; if `wallet` is given it lands in that wallet's inbox.
    pub fn create_invoice(&mut self, merchant: &str, wallet: Option<&str>, amount: u64) -> Result<Invoice, ActionError> {
        let mi = self.merchant_index(merchant)?;
        let wi = wallet.map(|w| self.wallet_index(w)).transpose()?;
        self.record(
            merchant,
            Action::Invoice {
                wallet: wallet.map(str::to_owned),
                amount,
            },
        );
        self.count("invoice");
        let now = self.tick();
        match self.merchants[mi].merchant.create_invoice(amount, now) {
            Ok(inv) => {
                if let Some(wi) = wi {
                    self.wallets[wi].inbox.push_back(inv.clone());
                }
                Ok(inv)
            }
            Err(e) => {
                self.tally(e.code());
                Err(e.into())
            }
        }
    }

    fn find_invoice(&self, merchant: &str, invoice_id: &str) -> Result<Invoice, ActionError> {
        let mi = self.merchant_index(merchant)?;
        self.merchants[mi]
            .merchant
            .invoice(invoice_id)
            .map(|r| r.invoice.clone())
            .ok_or(ActionError::Merchant(MerchantError::WrongInvoice))
    }

    /// Starts a payment. With `invoice` unset the wallet pays the oldest
    /// invoice in its inbox (restricted to `merchant` if given).
    pub fn pay(&mut self, wallet: &str, merchant: Option<&str>, invoice_id: Option<&str>) -> Result<InvoiceRef, ActionError> {
        let wi = self.wallet_index(wallet)?;
        self.record(
            wallet,
            Action::Pay {
                merchant: merchant.map(str::to_owned),
                invoice_id: invoice_id.map(str::to_owned),
            },
        );
        self.count("pay");
        let invoice = match (merchant, invoice_id) {
            (Some(m), Some(id)) => {
                let inv = self.find_invoice(m, id);
                if let Ok(inv) = &inv {
                    self.wallets[wi].inbox.retain(|i| i != inv);
                }
                inv
            }
            _ => {
                let merchant_id = merchant
                    .map(|m| self.merchant_index(m).map(|mi| self.merchants[mi].merchant.id().to_owned()))
                    .transpose()?;
                let inbox = &mut self.wallets[wi].inbox;
                let pos = inbox
                    .iter()
                    .position(|i| merchant_id.as_ref().is_none_or(|m| &i.merchant_id == m));
                pos.and_then(|p| inbox.remove(p)).ok_or(ActionError::NoInvoice)
            }
        };
        let invoice = match invoice {
            Ok(i) => i,
            Err(e) => {
                self.tally(e.code());
                return Err(e);
            }
        };
        let now = self.tick();
        let key = (wi, invoice.invoice_ref());
        match self.wallets[wi].wallet.prepare_payment(&invoice, now) {
            Ok(bundle) => {
                self.payments.insert(key.clone(), PaymentStatus::Pending);
                self.submit(wi, bundle, None);
                Ok(key.1)
            }
            Err(e) => {
                self.tally(e.code());
                if e != WalletError::PaymentPending {
                    self.payments.insert(key, PaymentStatus::Failed(e.clone()));
                }
                Err(e.into())
            }
        }
    }

    fn submit(&mut self, wi: usize, bundle: cbdc_core::ledger::SpendBundle, latency: Option<u64>) {
        let reply_to = ReplyTo(self.next_route);
        self.next_route += 1;
        self.routes.insert(reply_to, (wi, bundle.invoice_ref.clone()));
        let msg = Message::Spend { reply_to, bundle };
        self.capture(&msg);
        let now = self.tick();
        match latency {
            Some(l) => self.network.send_after(now, l, msg),
            None => self.network.send(now, msg),
        };
    }

    /// Has `wallet` pay two fresh, equal invoices from two merchants with the
    /// same assets; both bundles reach the sequencer in the same tick.
    pub fn double_spend(&mut self, wallet: &str, merchants: &[String], amount: u64) -> Result<(InvoiceRef, InvoiceRef), ActionError> {
        let wi = self.wallet_index(wallet)?;
        let [ma, mb] = merchants else {
            return Err(ConfigError::Invalid("double_spend needs two merchants".into()).into());
        };
        let (ia, ib) = (self.merchant_index(ma)?, self.merchant_index(mb)?);
        self.record(
            wallet,
            Action::DoubleSpend {
                merchants: merchants.to_vec(),
                amount,
            },
        );
        self.count("double_spend");
        let now = self.tick();
        let inv_a = self.merchants[ia].merchant.create_invoice(amount, now)?;
        let inv_b = self.merchants[ib].merchant.create_invoice(amount, now)?;
        match self.wallets[wi].wallet.double_spend(&inv_a, &inv_b, now) {
            Ok((a, b)) => {
                let latency = self.network.draw_latency();
                for inv in [&inv_a, &inv_b] {
                    self.payments.insert((wi, inv.invoice_ref()), PaymentStatus::Pending);
                }
                self.submit(wi, a, Some(latency));
                self.submit(wi, b, Some(latency));
                Ok((inv_a.invoice_ref(), inv_b.invoice_ref()))
            }
            Err(e) => {
                self.tally(e.code());
                Err(e.into())
            }
        }
    }

    pub fn deposit(&mut self, merchant: &str) -> Result<u64, ActionError> {
        let mi = self.merchant_index(merchant)?;
        self.record(merchant, Action::Deposit);
        self.count("deposit");
        let Harness {
            merchants,
            banks,
            mint,
            sequencer,
            ..
        } = self;
        let actor = &mut merchants[mi];
        match actor.merchant.deposit(&mut banks[actor.bank], mint, sequencer) {
            Ok(c) => Ok(c),
            Err(e) => {
                self.tally(e.code());
                Err(e.into())
            }
        }
    }

    pub fn inject_fault(&mut self, fault: FaultSpec) -> Result<(), ActionError> {
        if fault.to_tick < fault.from_tick || !(0.0..=1.0).contains(&fault.rate) {
            return Err(ConfigError::Invalid("fault window or rate out of range".into()).into());
        }
        for v in &fault.validators {
            if !self.validators.iter().any(|x| x.id() == v) {
                return Err(ActionError::UnknownActor(v.clone()));
            }
        }
        self.recorded.push(ScriptEvent {
            tick: fault.from_tick,
            actor: "harness".into(),
            action: Action::Fault {
                kind: fault.kind,
                validators: fault.validators.clone(),
                rate: fault.rate,
                to_tick: fault.to_tick,
            },
        });
        self.count("fault");
        self.network.add_fault(fault);
        Ok(())
    }

    fn run_event(&mut self, ev: ScriptEvent) {
        let actor = ev.actor.as_str();
        // Failures are tallied inside each action.
        let _ = match ev.action {
            Action::Withdraw {
                amount,
                corrupt_signature,
            } => self.withdraw(actor, amount, corrupt_signature).map(drop),
            Action::Invoice { wallet, amount } => self.create_invoice(actor, wallet.as_deref(), amount).map(drop),
            Action::Pay { merchant, invoice_id } => self.pay(actor, merchant.as_deref(), invoice_id.as_deref()).map(drop),
            Action::DoubleSpend { merchants, amount } => self.double_spend(actor, &merchants, amount).map(drop),
            Action::Deposit => self.deposit(actor).map(drop),
            Action::Fault {
                kind,
                validators,
                rate,
                to_tick,
            } => self.inject_fault(FaultSpec {
                kind,
                validators,
                rate,
                from_tick: ev.tick,
                to_tick,
            }),
        };
    }

    fn run_script_events(&mut self, now: Tick) {
        while self.script.front().is_some_and(|e| e.tick <= now) {
            let ev = self.script.pop_front().expect("checked");
            self.run_event(ev);
        }
    }

    // -- message handling --------------------------------------------------

    fn dispatch(&mut self, outputs: Vec<LedgerOutput>) {
        let now = self.tick();
        for o in outputs {
            match o {
                LedgerOutput::ToValidator { validator_id, proposal } => {
                    self.network.send(now, Message::Proposal { validator_id, proposal });
                }
                LedgerOutput::ToClient { reply_to, outcome } => {
                    self.network.send(now, Message::Outcome { reply_to, outcome });
                }
            }
        }
    }

    fn deliver(&mut self, msg: Message) {
        let now = self.tick();
        match msg {
            Message::Spend { reply_to, bundle } => {
                let invoice_ref = bundle.invoice_ref.clone();
                if let Err(error) = self.sequencer.receive_spend(reply_to, bundle) {
                    self.network.send(
                        now,
                        Message::Outcome {
                            reply_to,
                            outcome: BundleOutcome::Rejected { invoice_ref, error },
                        },
                    );
                }
            }
            Message::Proposal { validator_id, proposal } => {
                let v = self
                    .validators
                    .iter_mut()
                    .find(|v| v.id() == validator_id)
                    .expect("proposals only go to known validators");
                if let Some(ack) = v.on_proposal(&proposal) {
                    self.network.send(now, Message::Ack { ack });
                }
            }
            Message::Ack { ack } => {
                let out = self.sequencer.receive_ack(ack);
                self.dispatch(out);
            }
            Message::Outcome { reply_to, outcome } => {
                let msg = Message::Outcome { reply_to, outcome };
                self.capture(&msg);
                let Message::Outcome { reply_to, outcome } = msg else { unreachable!() };
                self.on_outcome(reply_to, outcome);
            }
        }
    }

    fn on_outcome(&mut self, reply_to: ReplyTo, outcome: BundleOutcome) {
        let Some((wi, invoice_ref)) = self.routes.remove(&reply_to) else {
            self.tally("UnroutableOutcome");
            return;
        };
        let key = (wi, invoice_ref);
        match self.wallets[wi].wallet.complete_payment(outcome) {
            Ok(proof) => {
                self.count("payment_certified");
                self.capture(&proof);
                self.trail.certified.extend(proof.spends.iter().cloned());
                let merchant_result = self.hand_to_merchant(&proof);
                self.payments.insert(key, PaymentStatus::Settled { proof, merchant_result });
            }
            Err(e) => {
                self.count("payment_failed");
                self.tally(e.code());
                self.payments.insert(key, PaymentStatus::Failed(e));
            }
        }
    }

    /// Local handoff of a certified proof to the merchant it names.
    fn hand_to_merchant(&mut self, proof: &PaymentProof) -> Result<u64, MerchantError> {
        let Some(mi) = self.merchant_by_id(&proof.invoice_ref.merchant_id) else {
            self.trail.custody_failures.push(proof.invoice_ref.merchant_id.clone());
            return Err(MerchantError::WrongInvoice);
        };
        let m = &mut self.merchants[mi].merchant;
        match m.accept_payment(proof) {
            Ok(v) => {
                *self.trail.accepted.entry(proof.invoice_ref.clone()).or_default() += 1;
                Ok(v)
            }
            Err(e) => {
                if let Err(c) = m.take_custody(proof) {
                    self.trail.custody_failures.push(c.code().to_owned());
                }
                self.tally(e.code());
                Err(e)
            }
        }
    }

    // -- clock -------------------------------------------------------------

    /// Advances one tick: closes the current tick at the sequencer, delivers
    /// what is due, runs that tick's script events, then checks conservation.
    pub fn step(&mut self) -> Tick {
        let out = self.sequencer.end_of_tick();
        self.dispatch(out);
        let now = self.sequencer.tick();
        while let Some(msg) = self.network.pop_due(now) {
            self.deliver(msg);
        }
        self.run_script_events(now);
        self.audit_tick(now);
        self.count("tick");
        now
    }

    pub fn step_n(&mut self, n: u64) -> Tick {
        for _ in 0..n {
            self.step();
        }
        self.tick()
    }

    /// Nothing scheduled, nothing in transit, nothing awaiting quorum.
    pub fn is_idle(&self) -> bool {
        self.script.is_empty()
            && self.network.in_transit() == 0
            && self.sequencer.pending_bundles() == 0
            && !self.payments.values().any(|p| *p == PaymentStatus::Pending)
    }

    /// Runs until idle or `max_ticks`.
    pub fn run_to_end(&mut self) {
        while self.tick() < self.config.max_ticks && !self.is_idle() {
            self.step();
        }
    }

    /// Starts a payment and steps the clock until it settles.
    pub fn pay_and_settle(
        &mut self,
        wallet: &str,
        merchant: &str,
        invoice_id: &str,
    ) -> Result<PaymentReceipt, ActionError> {
        let invoice_ref = self.pay(wallet, Some(merchant), Some(invoice_id))?;
        let wi = self.wallet_index(wallet)?;
        let key = (wi, invoice_ref);
        let limit = self.config.quorum_timeout_ticks + 4 * self.config.latency.max + 4;
        for _ in 0..limit {
            match self.payments.get(&key) {
                Some(PaymentStatus::Settled { proof, merchant_result }) => {
                    return Ok(PaymentReceipt {
                        proof: proof.clone(),
                        merchant_accepted: merchant_result.is_ok(),
                        merchant_error: merchant_result.as_ref().err().map(|e| e.code().to_owned()),
                        tick: self.tick(),
                    });
                }
                Some(PaymentStatus::Failed(e)) => return Err(e.clone().into()),
                _ => {
                    self.step();
                }
            }
        }
        Err(ActionError::NotSettled(limit))
    }

    pub fn validator_set(&self) -> &ValidatorSet {
        &self.sequencer.config().validators
    }

    pub(crate) fn sensitive_wallet_strings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for w in &self.wallets {
            out.push(w.wallet.linked_account().to_owned());
            out.push(w.wallet.rng_stream_id().to_owned());
            out.extend(w.wallet.tapped_factors().iter().map(|f| f.to_str_radix(16)));
        }
        out
    }
}
