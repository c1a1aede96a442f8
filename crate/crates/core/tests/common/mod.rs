#![allow(dead_code)]

use std::collections::BTreeMap;

use cbdc_core::asset::{genesis_commitment, Asset, Serial};
use cbdc_core::crypto::{blind, blind_sign, generate_keypair, unblind, BlindingFactor, MintDirectory, OwnerKey, SigningKeyPair};
use cbdc_core::rng::SeededStream;
use cbdc_core::Tick;

/// Denomination keys held outside any mint, for building assets directly.
pub struct Keys {
    pub keys: BTreeMap<u64, SigningKeyPair>,
    pub directory: MintDirectory,
}

impl Keys {
    pub fn new(seed: u64) -> Self {
        let mut rng = SeededStream::derive(seed, "fixture-keys");
        let keys: BTreeMap<u64, SigningKeyPair> = cbdc_core::DEFAULT_DENOMINATIONS
            .iter()
            .map(|d| (*d, generate_keypair(512, &mut rng).unwrap()))
            .collect();
        let directory = MintDirectory(keys.iter().map(|(d, k)| (*d, k.public.clone())).collect());
        Keys { keys, directory }
    }

    pub fn issue(&self, rng: &mut SeededStream, denomination: u64, tick: Tick) -> (Asset, OwnerKey) {
        let k = &self.keys[&denomination];
        let owner = OwnerKey::generate(rng);
        let serial = Serial::random(rng);
        let c = genesis_commitment(&serial, &owner.key_hash());
        let r = BlindingFactor::draw(rng, &k.public);
        let sig = unblind(&blind_sign(&blind(&c, &r, &k.public).unwrap(), &k.secret).unwrap(), &r, &k.public).unwrap();
        let asset = Asset {
            serial,
            denomination,
            genesis_owner_hash: owner.key_hash(),
            genesis_signature: sig,
            history: vec![],
            issue_tick: tick,
        };
        (asset, owner)
    }
}
