//! Keyed, splittable randomness.
//!
//! Every stochastic draw in the pipeline comes from a stream identified by a
//! [`StreamKey`]. The key is hashed through a SplitMix64 chain into a
//! xoshiro256** state, so the draws for one `(purpose, t, m, n)` slot never
//! depend on how many numbers another slot consumed or on iteration order.

use std::f64::consts::TAU;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    InversionNoise,
    Mask,
    InitNoise,
    /// Extra noise of a stochastic (`sigma > 0`) DDIM step.
    StepNoise,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::InversionNoise => 1,
            Purpose::Mask => 2,
            Purpose::InitNoise => 3,
            Purpose::StepNoise => 4,
        }
    }
}

/// Identifies one independent random stream. Unused index slots are 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub t: u32,
    pub m: u32,
    pub n: u32,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, t: u32, m: u32, n: u32) -> Self {
        Self {
            seed,
            purpose,
            t,
            m,
            n,
        }
    }
}

/// SplitMix64 generator (Steele, Lea and Flood).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256** state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    s: [u64; 4],
}

/// Hashes a key into a fresh generator state.
pub fn derive_stream(key: StreamKey) -> RngState {
    let mut h = SplitMix64::new(key.seed).next_u64();
    for field in [
        key.purpose.tag(),
        u64::from(key.t),
        u64::from(key.m),
        u64::from(key.n),
    ] {
        h = SplitMix64::new(h ^ field).next_u64();
    }
    RngState::from_seed(h)
}

impl RngState {
    /// Expands a 64-bit seed into the 256-bit state with SplitMix64.
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        let mut s = [0u64; 4];
        for w in &mut s {
            *w = sm.next_u64();
        }
        // xoshiro's only forbidden state
        if s == [0; 4] {
            s[0] = GOLDEN_GAMMA;
        }
        Self { s }
    }

    pub fn from_words(s: [u64; 4]) -> Self {
        assert!(s != [0; 4], "xoshiro256** state must not be all zero");
        Self { s }
    }

    pub fn words(&self) -> [u64; 4] {
        self.s
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw on (0, 1] with 53 bits of resolution.
    pub fn next_open_closed(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased integer in `0..bound` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let wide = u128::from(self.next_u64()) * u128::from(bound);
            if (wide as u64) >= threshold {
                return (wide >> 64) as u64;
            }
        }
    }

    /// Two independent standard normals via Box–Muller.
    pub fn gauss(&mut self) -> (f64, f64) {
        let u1 = self.next_open_closed();
        let u2 = self.next_open_closed();
        box_muller(u1, u2)
    }

    /// Fills `out` with standard normals, consuming draws in pairs.
    pub fn fill_gauss_f32(&mut self, out: &mut [f32]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.gauss();
            pair[0] = a as f32;
            pair[1] = b as f32;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.gauss().0 as f32;
        }
    }
}

/// Box–Muller transform of `u1 ∈ (0, 1]`, `u2 ∈ [0, 1]`.
pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = TAU * u2;
    (r * theta.cos(), r * theta.sin())
}
