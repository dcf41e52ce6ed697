use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an independent stream seed from a root seed, a purpose tag, and
/// positional indices (epoch, batch, trial, ...). FNV-1a over the inputs with
/// a splitmix64 finisher; collisions across distinct (tag, parts) are not a
/// concern at the stream counts used here.
pub fn derive(root: u64, tag: &str, parts: &[u64]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x100_0000_01b3;
    let mut h = FNV_OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    eat(&root.to_le_bytes());
    eat(tag.as_bytes());
    eat(&[0xff]); // terminator so ("ab", [1]) != ("a", [b"b..1" collision])
    for &p in parts {
        eat(&p.to_le_bytes());
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for a named stream. All randomness in the engine flows
/// through this so that runs are reproducible from a single root seed.
pub fn rng(root: u64, tag: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, tag, parts))
}

/// Stable 64-bit hash of a string, for deriving per-document streams.
pub fn hash_str(s: &str) -> u64 {
    derive(0, s, &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derive_is_stable_and_sensitive() {
        let a = derive(7, "chunk", &[0, 3]);
        assert_eq!(a, derive(7, "chunk", &[0, 3]));
        assert_ne!(a, derive(7, "chunk", &[0, 4]));
        assert_ne!(a, derive(7, "chunk", &[3, 0]));
        assert_ne!(a, derive(8, "chunk", &[0, 3]));
        assert_ne!(a, derive(7, "batch", &[0, 3]));
    }

    #[test]
    fn streams_are_independent() {
        let mut r1 = rng(42, "a", &[]);
        let mut r2 = rng(42, "b", &[]);
        let x1: u64 = r1.random();
        let x2: u64 = r2.random();
        assert_ne!(x1, x2);
        // same stream replays identically
        let mut r3 = rng(42, "a", &[]);
        let y1: u64 = r3.random();
        assert_eq!(x1, y1);
    }
}
