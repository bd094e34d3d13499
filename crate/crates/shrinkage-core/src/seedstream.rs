//! Collision-resistant derivation of independent RNG substreams from a
//! master seed and an index path.
//!
//! Parallel experiments assign one substream per work unit (sweep point,
//! replication, ...) so results are independent of worker count and
//! scheduling. The derivation expands `(master, path)` into a 256-bit
//! ChaCha12 key through four independently keyed SplitMix64 lanes; identical
//! inputs give identical streams on every platform.

pub use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

/// Maximum path length accepted by [`seed_substream`].
pub const MAX_PATH_LEN: usize = 8;

/// SplitMix64 finalizer: full-avalanche 64-bit mix.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a deterministic RNG for the substream identified by `path`.
///
/// Panics when the path is longer than [`MAX_PATH_LEN`]; eight levels cover
/// every nesting used by the experiment harness.
pub fn seed_substream(master: u64, path: &[u64]) -> ChaCha12Rng {
    assert!(
        path.len() <= MAX_PATH_LEN,
        "substream path too long: {} > {}",
        path.len(),
        MAX_PATH_LEN
    );
    let mut seed = [0u8; 32];
    for lane in 0u64..4 {
        // sponge over (master, len, path), fully mixed after each absorbed
        // word; the lane tweak makes the four output words independent
        let mut h = mix(master ^ lane.wrapping_mul(0xa076_1d64_78bd_642f));
        h = mix(h ^ (path.len() as u64).wrapping_add(0x1405_7b7e_f767_814f));
        for (depth, &index) in path.iter().enumerate() {
            h = mix(h ^ mix(index ^ ((depth as u64) << 56)));
        }
        seed[(lane as usize) * 8..(lane as usize + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}
