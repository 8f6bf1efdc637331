//! Keyed counter-based uniforms.
//!
//! Every variate is a pure function of a 64-bit seed and a structured key,
//! hashed through a chain of SplitMix64-style finalizers. Nothing is stored,
//! so the factor lattice can be addressed lazily and inner Monte Carlo copies
//! can be drawn without limit.

/// Domain tags keep independent streams from colliding.
pub(crate) mod tag {
    pub const FACTOR: u64 = 0x5E9A_7F3C_11D2_0001;
    pub const INNER: u64 = 0x5E9A_7F3C_11D2_0002;
    pub const REDRAW: u64 = 0x5E9A_7F3C_11D2_0003;
    pub const SIGN: u64 = 0x5E9A_7F3C_11D2_0004;
    pub const CENTER: u64 = 0x5E9A_7F3C_11D2_0005;
    pub const STATS: u64 = 0x5E9A_7F3C_11D2_0006;
    pub const CONFIG: u64 = 0x5E9A_7F3C_11D2_0007;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Absorbs one word into a running hash state.
#[inline]
pub fn absorb(state: u64, word: u64) -> u64 {
    mix64(state.wrapping_add(GOLDEN) ^ mix64(word.wrapping_add(GOLDEN)))
}

/// Open-interval uniform from the top 52 bits.
#[inline]
pub fn to_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Seed of replication `rep`: `seed ⊕ mix(rep)`.
#[inline]
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    seed ^ mix64(rep.wrapping_mul(GOLDEN).wrapping_add(0xA076_1D64_78BD_642F))
}

/// Derives a child seed from a parent, a domain tag and a list of words.
pub fn derive(seed: u64, domain: u64, words: &[u64]) -> u64 {
    let mut h = absorb(mix64(seed ^ domain), domain);
    for &w in words {
        h = absorb(h, w);
    }
    h
}

/// The `comp`-th uniform of the factor keyed by `(mask, coords)`.
pub fn factor_uniform(seed: u64, domain: u64, mask: u32, coords: &[usize], comp: usize) -> f64 {
    let mut h = absorb(mix64(seed ^ domain), mask as u64);
    for &c in coords {
        h = absorb(h, c as u64);
    }
    to_unit(absorb(h, comp as u64 ^ 0xC0FF_EE00))
}

/// A small sequential generator over the same mixing function, used where a
/// stream (rather than a keyed lookup) is natural.
#[derive(Clone, Debug)]
pub struct CounterStream {
    key: u64,
    counter: u64,
}

impl CounterStream {
    pub fn new(key: u64) -> Self {
        CounterStream { key: mix64(key ^ GOLDEN), counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = absorb(self.key, self.counter);
        self.counter += 1;
        out
    }

    pub fn uniform(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}
