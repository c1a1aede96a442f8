//! Simulated message delivery.
//!
//! Messages are queued under `(delivery tick, sequence number)` so delivery
//! order is total and reproducible. Latency and drops come from a dedicated
//! seeded stream. Client links (wallet and sequencer) are reliable; only the
//! sequencer↔validator links suffer drops and faults.

use std::collections::BTreeMap;

use cbdc_core::ledger::{BundleOutcome, Proposal, ProposalAck, ReplyTo, SpendBundle};
use cbdc_core::rng::SeededStream;
use cbdc_core::Tick;
use rand::Rng;
use serde::Serialize;

use crate::config::{FaultKind, FaultSpec, LatencyConfig};

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Spend { reply_to: ReplyTo, bundle: SpendBundle },
    Proposal { validator_id: String, proposal: Proposal },
    Ack { ack: ProposalAck },
    Outcome { reply_to: ReplyTo, outcome: BundleOutcome },
}

impl Message {
    /// The validator at the far end of a validator link.
    fn validator(&self) -> Option<&str> {
        match self {
            Message::Proposal { validator_id, .. } => Some(validator_id),
            Message::Ack { ack } => Some(&ack.validator_id),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct NetworkStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

pub struct Network {
    queue: BTreeMap<(Tick, u64), Message>,
    seq: u64,
    rng: SeededStream,
    latency: LatencyConfig,
    drop_rate: f64,
    faults: Vec<FaultSpec>,
    pub stats: NetworkStats,
}

impl Network {
    pub fn new(rng: SeededStream, latency: LatencyConfig, drop_rate: f64) -> Self {
        Network {
            queue: BTreeMap::new(),
            seq: 0,
            rng,
            latency,
            drop_rate,
            faults: Vec::new(),
            stats: NetworkStats::default(),
        }
    }

    pub fn add_fault(&mut self, fault: FaultSpec) {
        self.faults.push(fault);
    }

    pub fn faults(&self) -> &[FaultSpec] {
        &self.faults
    }

    fn active(&self, now: Tick) -> impl Iterator<Item = &FaultSpec> {
        self.faults.iter().filter(move |f| f.from_tick <= now && now < f.to_tick)
    }

    pub fn validator_down(&self, now: Tick, validator: &str) -> bool {
        self.active(now).any(|f| {
            matches!(f.kind, FaultKind::Partition | FaultKind::ValidatorCrash)
                && f.validators.iter().any(|v| v == validator)
        })
    }

    fn drop_rate_at(&self, now: Tick, validator: &str) -> f64 {
        self.active(now)
            .filter(|f| f.kind == FaultKind::DropSpike)
            .filter(|f| f.validators.is_empty() || f.validators.iter().any(|v| v == validator))
            .map(|f| f.rate)
            .fold(self.drop_rate, f64::max)
    }

    pub fn draw_latency(&mut self) -> u64 {
        self.rng.gen_range(self.latency.min..=self.latency.max)
    }

    /// Queues `msg` with a freshly drawn latency. Returns the delivery tick,
    /// or `None` if the message was lost.
    pub fn send(&mut self, now: Tick, msg: Message) -> Option<Tick> {
        let latency = self.draw_latency();
        self.send_after(now, latency, msg)
    }

    pub fn send_after(&mut self, now: Tick, latency: u64, msg: Message) -> Option<Tick> {
        self.stats.sent += 1;
        if let Some(v) = msg.validator() {
            let rate = self.drop_rate_at(now, v);
            let roll: f64 = self.rng.gen();
            if self.validator_down(now, v) || roll < rate {
                self.stats.dropped += 1;
                return None;
            }
        }
        let at = now + latency;
        self.queue.insert((at, self.seq), msg);
        self.seq += 1;
        Some(at)
    }

    /// Next message due at or before `now`, skipping any whose validator is
    /// unreachable at delivery time.
    pub fn pop_due(&mut self, now: Tick) -> Option<Message> {
        loop {
            let (&key, _) = self.queue.first_key_value()?;
            if key.0 > now {
                return None;
            }
            let msg = self.queue.remove(&key).expect("present");
            if msg.validator().is_some_and(|v| self.validator_down(now, v)) {
                self.stats.dropped += 1;
                continue;
            }
            self.stats.delivered += 1;
            return Some(msg);
        }
    }

    pub fn in_transit(&self) -> usize {
        self.queue.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbdc_core::asset::InvoiceRef;
    use cbdc_core::ledger::LedgerError;

    fn outcome() -> Message {
        Message::Outcome {
            reply_to: ReplyTo(1),
            outcome: BundleOutcome::Rejected {
                invoice_ref: InvoiceRef {
                    merchant_id: "m".into(),
                    invoice_id: "i".into(),
                },
                error: LedgerError::QuorumTimeout,
            },
        }
    }

    fn ack(v: &str) -> Message {
        Message::Ack {
            ack: ProposalAck {
                validator_id: v.into(),
                round: 0,
                replica_len: 0,
                signatures: vec![],
            },
        }
    }

    fn net(min: u64, max: u64, drop: f64) -> Network {
        Network::new(SeededStream::seeded(1), LatencyConfig { min, max }, drop)
    }

    #[test]
    fn latency_two_delivers_two_ticks_later() {
        let mut n = net(2, 2, 0.0);
        assert_eq!(n.send(5, outcome()), Some(7));
        assert!(n.pop_due(6).is_none());
        assert!(n.pop_due(7).is_some());
        assert!(n.pop_due(7).is_none());
    }

    #[test]
    fn same_tick_messages_keep_send_order() {
        let mut n = net(1, 1, 0.0);
        n.send(0, ack("a"));
        n.send(0, ack("b"));
        let first = n.pop_due(1).unwrap();
        assert!(matches!(first, Message::Ack { ack } if ack.validator_id == "a"));
    }

    #[test]
    fn drops_hit_validator_links_only() {
        let mut n = net(1, 1, 1.0);
        assert_eq!(n.send(0, ack("validator-0")), None);
        assert!(n.send(0, outcome()).is_some());
        assert_eq!(n.stats.dropped, 1);
    }

    #[test]
    fn crash_window_blocks_then_restores() {
        let mut n = net(1, 1, 0.0);
        n.add_fault(FaultSpec {
            kind: FaultKind::ValidatorCrash,
            validators: vec!["validator-1".into()],
            rate: 0.0,
            from_tick: 3,
            to_tick: 6,
        });
        assert!(n.send(2, ack("validator-1")).is_some());
        assert!(n.pop_due(3).is_none(), "delivery inside the window is lost");
        assert_eq!(n.send(4, ack("validator-1")), None);
        assert!(n.send(6, ack("validator-1")).is_some());
        assert!(n.pop_due(7).is_some());
    }

    #[test]
    fn draws_are_reproducible() {
        let mut a = net(1, 5, 0.0);
        let mut b = net(1, 5, 0.0);
        let xs: Vec<u64> = (0..20).map(|_| a.draw_latency()).collect();
        let ys: Vec<u64> = (0..20).map(|_| b.draw_latency()).collect();
        assert_eq!(xs, ys);
        assert!(xs.iter().all(|x| (1..=5).contains(x)));
    }
}
