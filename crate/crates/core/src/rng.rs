//! Seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! pure function of the master seed, a purpose tag and integer coordinates
//! (client, round, epoch, ...). No generator is shared between purposes, so
//! changing the amount of randomness consumed in one place never shifts the
//! draws made anywhere else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags. Values are part of the replay contract; do not renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Synthetic = 2,
    Centers = 3,
    PartitionIid = 4,
    PartitionDirichlet = 5,
    Batches = 6,
    ServerOrder = 7,
    Sigma = 8,
    Smoothness = 9,
    Centralized = 10,
    GradCheck = 11,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, purpose: Purpose, coords: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ splitmix64(purpose as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

pub fn stream(master: u64, purpose: Purpose, coords: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_seed(master, purpose, coords))
}
