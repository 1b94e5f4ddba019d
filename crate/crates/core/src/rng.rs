//! Deterministic random number streams.
//!
//! Every consumer of randomness draws from a named stream derived from
//! `(seed, stream name)`, so adding or reordering one consumer never shifts
//! another's sequence. The generator is a self-contained xoshiro256++ seeded
//! through splitmix64; outputs are bit-stable across runs and platforms,
//! which the byte-identical dataset/checkpoint guarantees rely on.

/// FNV-1a hash of a stream name, mixed into the seed.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A named, seeded xoshiro256++ stream.
#[derive(Clone, Debug)]
pub struct StreamRng {
    s: [u64; 4],
    gauss_spare: Option<f64>,
}

impl StreamRng {
    /// Stream identified by `(seed, name)`.
    pub fn new(seed: u64, name: &str) -> Self {
        Self::from_raw(seed ^ fnv1a64(name.as_bytes()))
    }

    /// Stream identified by `(seed, name, index)`, for per-item substreams
    /// (e.g. per-record sensor noise) that must not depend on visit order.
    pub fn new_indexed(seed: u64, name: &str, index: u64) -> Self {
        Self::from_raw(seed ^ fnv1a64(name.as_bytes()) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    fn from_raw(raw: u64) -> Self {
        let mut sm = raw;
        let mut s = [0u64; 4];
        for slot in &mut s {
            *slot = splitmix64(&mut sm);
        }
        if s == [0, 0, 0, 0] {
            s[0] = 1;
        }
        Self {
            s,
            gauss_spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    /// Standard normal via Box-Muller; pairs are cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.gauss_spare.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.unit_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = std::f64::consts::TAU * u2;
        self.gauss_spare = Some(r * a.sin());
        r * a.cos()
    }

    /// Unbiased integer in [0, n).
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_same_sequence() {
        let mut a = StreamRng::new(42, "init");
        let mut b = StreamRng::new(42, "init");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_names_differ() {
        let mut a = StreamRng::new(42, "init");
        let mut b = StreamRng::new(42, "data");
        let same = (0..16).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn indexed_substreams_differ() {
        let mut a = StreamRng::new(7, "noise");
        let mut b = StreamRng::new_indexed(7, "noise", 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_in_range() {
        let mut rng = StreamRng::new(1, "u");
        for _ in 0..1000 {
            let v = rng.uniform(-8.0, 8.0);
            assert!((-8.0..8.0).contains(&v));
        }
    }

    #[test]
    fn normal_moments_reasonable() {
        let mut rng = StreamRng::new(3, "n");
        let n = 20_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = StreamRng::new(9, "shuffle");
        let mut v: Vec<u32> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(v, (0..100).collect::<Vec<_>>());
    }
}
