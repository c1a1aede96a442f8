//! Token-based retail CBDC protocol library.
//!
//! The crate models a two-tier issuance chain and the actors around it:
//!
//! * [`crypto`]: SHA-256 digests, RSA-style blind signatures with one key per
//!   denomination, and Ed25519 owner signatures for transfer records.
//! * [`asset`]: self-verifying assets that carry their own transfer history.
//! * [`ledger`]: the permissioned spend registry (sequencer plus K-of-N
//!   validator acknowledgements) keyed by nullifiers.
//! * [`mint`], [`bank`], [`wallet`], [`merchant`]: the central bank, tier-two
//!   banks, non-custodial consumer wallets and merchant tills.
//!
//! Every actor is a plain single-owner state machine. Time is a logical tick
//! counter owned by the ledger; randomness comes from named seeded streams
//! ([`rng::SeededStream`]).

pub mod asset;
pub mod bank;
pub mod crypto;
pub mod ledger;
pub mod merchant;
pub mod mint;
pub mod rng;
pub mod wallet;

mod codec;

pub use asset::{Asset, InvoiceRef, Nullifier, Serial, TransferRecord};
pub use crypto::{Digest, MintDirectory, OwnerKey, OwnerPublicKey};

/// Logical ledger time.
pub type Tick = u64;

/// Default denomination set, in minor currency units.
pub const DEFAULT_DENOMINATIONS: [u64; 5] = [1, 5, 10, 20, 50];
