//! HEAT: a transformer over typed and qualified hypergraphs.

#![allow(clippy::needless_range_loop)]

pub mod bugs;
pub mod bugtask;
pub mod bundle;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod gradsuite;
pub mod kg;
pub mod kgtask;
pub mod packing;
pub mod reference;
pub mod vocab;

pub use config::{AggKind, ConfigError, HeatConfig, Variant};
pub use encoder::{GraphBatch, GraphInput, HeatEncoder, States};
pub use packing::{greedy_pack, optimal_pack_bruteforce, packing_cost, MicrobatchSpec, PackedBatch};
pub use vocab::{subtokenize, Vocab};

/// Source of dropout masks; `None` disables dropout.
pub type DropoutRng<'a> = Option<&'a mut (dyn rand::RngCore + 'static)>;

/// Independent deterministic stream `name` derived from `seed`.
pub fn rng_stream(seed: u64, name: &str) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    // FNV-1a keeps stream ids stable across platforms and releases
    let stream = name
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
