//! Named random streams derived from one master seed.
//!
//! Every stage asks for a stream by name (`"explore/ls-03"`, `"eval/bh-01"`),
//! so stages stay reproducible in isolation and independent of call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(master: u64, name: &str) -> u64 {
    mix(master ^ mix(fnv1a(name.as_bytes())))
}

pub fn stream(master: u64, name: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, name))
}
