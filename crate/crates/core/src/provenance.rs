//! Seed derivation and run records.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Independent random streams used within one replication.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SeedStream {
    Data,
    Split,
    Init,
    Folds,
}

impl SeedStream {
    fn tag(self) -> u64 {
        match self {
            SeedStream::Data => 0x6461_7461,
            SeedStream::Split => 0x7370_6c69,
            SeedStream::Init => 0x696e_6974,
            SeedStream::Folds => 0x666f_6c64,
        }
    }
}

/// Seed for `stream`, decorrelated from the base seed and from other streams.
pub fn derive_seed(base: u64, stream: SeedStream) -> u64 {
    let mut rng = SplitMix64::seed_from_u64(base ^ stream.tag().wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.next_u64()
}

/// SHA-256 of the compact JSON form of `config`, hex encoded.
///
/// `serde_json` maps keep keys sorted, so equal configurations hash equally.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let value = serde_json::to_value(config)?;
    let bytes = serde_json::to_vec(&value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// What produced an output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub scalar: String,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, config: &C, seeds: Vec<u64>, scalar: &str) -> Result<Self> {
        Ok(Provenance {
            tool: "nccqr".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config)?,
            seeds,
            scalar: scalar.into(),
        })
    }
}
