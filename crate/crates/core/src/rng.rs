//! Counter-based random streams.
//!
//! Every draw is a pure function of `(master seed, stream name, element
//! index)`, so perturbing entries in any order or on any number of threads
//! yields the same values. The algorithm is fixed and platform independent:
//!
//! * stream key: `mix64(master ^ mix64(fnv1a64(name)))`
//! * raw bits for counter `i`: `mix64(key + (i + 1) * 0x9E37_79B9_7F4A_7C15)`
//!   (SplitMix64 evaluated at an arbitrary position)
//! * uniform: top 53 bits of the raw word scaled by `2^-53`, in `[0, 1)`
//! * normal for element `i`: Box-Muller cosine branch on the uniforms at
//!   counters `2i` and `2i + 1`, i.e. `sqrt(-2 ln(1 - u1)) * cos(2π u2)`

use std::f64::consts::TAU;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

/// Continues an FNV-1a hash from a previous state, for streaming input.
pub fn fnv1a64_extend(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed from which named per-entry substreams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    master_seed: u64,
}

impl SeedStream {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Substream keyed by `name` only; unrelated to any other name's stream.
    pub fn substream(&self, name: &str) -> EntryStream {
        EntryStream {
            key: mix64(self.master_seed ^ mix64(fnv1a64(name.as_bytes()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryStream {
    key: u64,
}

impl EntryStream {
    pub fn bits(&self, counter: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw for row-major element `index`.
    pub fn normal(&self, index: u64) -> f64 {
        let u1 = self.uniform(index.wrapping_mul(2));
        let u2 = self.uniform(index.wrapping_mul(2).wrapping_add(1));
        (-2.0 * (1.0 - u1).ln()).sqrt() * (TAU * u2).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xCBF2_9CE4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xAF63_DC4C_8601_EC8C);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_F739_67E8);
        assert_eq!(
            fnv1a64_extend(fnv1a64(b"foo"), b"bar"),
            fnv1a64(b"foobar")
        );
    }

    #[test]
    fn splitmix_reference_sequence() {
        // SplitMix64 seeded with 0 produces these as its first outputs.
        let s = EntryStream { key: 0 };
        assert_eq!(s.bits(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(s.bits(1), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn draws_are_addressed_by_name_and_index() {
        let a = SeedStream::new(7).substream("blocks.2.conv1.weight");
        let b = SeedStream::new(7).substream("blocks.2.conv1.weight");
        let c = SeedStream::new(7).substream("blocks.2.conv2.weight");
        let d = SeedStream::new(8).substream("blocks.2.conv1.weight");
        for i in [0u64, 1, 17, 1 << 40] {
            assert_eq!(a.normal(i).to_bits(), b.normal(i).to_bits());
        }
        assert_ne!(a.normal(0), c.normal(0));
        assert_ne!(a.normal(0), d.normal(0));
    }

    #[test]
    fn uniform_range_and_normal_moments() {
        let s = SeedStream::new(0).substream("moments");
        let n = 200_000u64;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            let u = s.uniform(i);
            assert!((0.0..1.0).contains(&u));
            let g = s.normal(i);
            assert!(g.is_finite());
            sum += g;
            sq += g * g;
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((std - 1.0).abs() < 4.0 / (2.0 * n as f64).sqrt(), "std {std}");
    }
}
