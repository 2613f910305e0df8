use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: impl IntoIterator<Item = u8>, mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-task seed: `seed ⊕ hash(slice_id, box_index, member_index)`.
///
/// The hash is FNV-1a followed by a SplitMix64 finaliser, so the value is
/// stable across platforms, compiler versions and worker scheduling.
pub fn derive_seed(seed: u64, slice_id: &str, box_index: usize, member_index: usize) -> u64 {
    let h = fnv1a(slice_id.bytes(), FNV_OFFSET);
    let h = fnv1a((box_index as u64).to_le_bytes(), h);
    let h = fnv1a((member_index as u64).to_le_bytes(), h);
    seed ^ splitmix64(h)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
