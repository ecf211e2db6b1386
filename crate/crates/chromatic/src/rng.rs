//! Deterministic random number generation.
//!
//! Every random quantity in a run is derived from a 64-bit seed through the
//! generators in this module, so any process that knows a seed reproduces the
//! same values. The generator algorithm is fixed as part of the wire contract:
//! tasks carry seeds only, and coordinator and workers must expand them to
//! identical perturbation vectors.
//!
//! Algorithm: SplitMix64 (Steele, Lea, Flood 2014) for the uniform stream,
//! the Marsaglia polar method for standard normals. Both are pinned here and
//! must not change without bumping the protocol version.

/// SplitMix64 generator. Small state, passes BigCrush, and cheap to seed,
/// which matters because we create one per task.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; used where log(0) must be avoided.
    pub fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [low, high).
    pub fn next_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    pub fn next_usize(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    /// Standard normal via the Marsaglia polar method.
    pub fn next_normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }
}

/// Expands `seed` into a `dim`-dimensional standard normal vector.
/// Deterministic: the same (seed, dim) always yields the same vector.
pub fn standard_normal_vec(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..dim).map(|_| rng.next_normal()).collect()
}

/// Derives a child seed from a master seed, a domain tag and integer parts.
/// FNV-1a over the tag bytes and the little-endian parts, finalized through
/// one SplitMix64 step so nearby inputs decorrelate.
pub fn derive_seed(master: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut absorb = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in master.to_le_bytes() {
        absorb(b);
    }
    for b in tag.as_bytes() {
        absorb(*b);
    }
    for part in parts {
        for b in part.to_le_bytes() {
            absorb(b);
        }
    }
    SplitMix64::new(h).next_u64()
}
