//! Named random sub-streams derived from one top-level seed.
//!
//! Every consumer (task sampling, rollouts, probes, evaluation) draws from
//! its own ChaCha stream selected by a name and an index, so changing how
//! much randomness one component uses never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ENV: &str = "env";
pub const POLICY: &str = "policy";
pub const EVAL: &str = "eval";
pub const SFT: &str = "sft";
pub const PROBE: &str = "probe";

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stream `index` of the sub-stream family `name` under `seed`.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()));
    rng.set_stream(index);
    rng
}
