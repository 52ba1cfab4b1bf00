//! Seeded pseudo-random source shared by the splitter, the network
//! initializer and the synthetic corpus generator.
//!
//! The generator is xorshift64* (Vigna 2016):
//!
//! ```text
//! x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;
//! out = x * 0x2545_F491_4F6C_DD1D   (wrapping)
//! ```
//!
//! The 64-bit state is derived from the user seed with one SplitMix64 step
//! (`z = seed + 0x9E37_79B9_7F4A_7C15; z = (z ^ z>>30) * 0xBF58_476D_1CE4_E5B9;
//! z = (z ^ z>>27) * 0x94D0_49BB_1331_11EB; z ^= z>>31`). A zero result is
//! replaced by `0x9E37_79B9_7F4A_7C15` because xorshift has an all-zero fixed
//! point.
//!
//! Bounded integers use the multiply-shift reduction
//! `(next_u64() as u128 * bound as u128) >> 64`, and unit floats use the top 53
//! bits: `(next_u64() >> 11) as f64 / 2^53`. Both are easy to port, so splits
//! are reproducible outside Rust.

use rand_core::RngCore;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const XORSHIFT_MULT: u64 = 0x2545_F491_4F6C_DD1D;

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorShiftRng {
    state: u64,
}

impl XorShiftRng {
    pub fn seed_from(seed: u64) -> Self {
        let state = match splitmix64(seed) {
            0 => GOLDEN_GAMMA,
            s => s,
        };
        XorShiftRng { state }
    }

    /// Derives an independent stream for a sub-task (an epoch, a writer, ...).
    pub fn derive(seed: u64, stream: u64) -> Self {
        Self::seed_from(splitmix64(seed) ^ stream.wrapping_mul(GOLDEN_GAMMA))
    }

    #[inline]
    pub fn next(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(XORSHIFT_MULT)
    }

    /// Uniform integer in `0..bound`. `bound` must be positive.
    #[inline]
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((self.next() as u128 * bound as u128) >> 64) as u64
    }

    /// Uniform float in `[0, 1)`.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fisher-Yates, walking from the last slot down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

impl RngCore for XorShiftRng {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = XorShiftRng::seed_from(42);
        let mut b = XorShiftRng::seed_from(42);
        for _ in 0..100 {
            assert_eq!(a.next(), b.next());
        }
    }

    #[test]
    fn frozen_reference_outputs() {
        // computed with an independent port of the documented algorithm
        let mut r = XorShiftRng::seed_from(0);
        assert_eq!(r.next(), 0x7bbc_b40d_5506_82d0);
        assert_eq!(r.next(), 0xde7f_e413_d00c_c9fd);
        assert_eq!(r.next(), 0xb3c6_3835_3c66_8c91);
        let mut r = XorShiftRng::seed_from(42);
        assert_eq!(r.next(), 0x31b0_ece7_c4f6_97a2);
        assert_eq!(r.next(), 0x9008_a3b1_cb68_6f03);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = XorShiftRng::seed_from(7);
        for bound in 1..50u64 {
            for _ in 0..20 {
                assert!(r.below(bound) < bound);
            }
        }
    }

    #[test]
    fn unit_interval() {
        let mut r = XorShiftRng::seed_from(9);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let u = r.unit();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        assert!((sum / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut r = XorShiftRng::seed_from(3);
        let mut v: Vec<usize> = (0..100).collect();
        r.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
