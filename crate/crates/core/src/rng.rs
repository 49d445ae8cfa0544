//! Counter-based splittable random streams.
//!
//! A stream is identified by `(seed, stream)`; `counter` is the position in
//! 32-bit words. ChaCha8 gives random access by word position, so a state
//! saved mid-run resumes exactly.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub counter: u64,
}

pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

fn expand_seed(seed: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut x = seed;
    for chunk in out.chunks_mut(8) {
        x = splitmix64(x);
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    out
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::from_state(RngState {
            seed,
            stream: 0,
            counter: 0,
        })
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(expand_seed(state.seed));
        inner.set_stream(state.stream);
        inner.set_word_pos(state.counter as u128);
        Rng {
            seed: state.seed,
            stream: state.stream,
            inner,
        }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            counter: self.inner.get_word_pos() as u64,
        }
    }

    /// Independent child stream. Children of the same parent with distinct
    /// ids never share a keystream.
    pub fn split(&self, id: u64) -> Rng {
        let stream = splitmix64(self.stream ^ splitmix64(id.wrapping_add(0x5EED)));
        Self::from_state(RngState {
            seed: self.seed,
            stream,
            counter: 0,
        })
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on (0, 1].
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Lemire's multiply-shift; bias is < n / 2^64.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() <= p && p > 0.0
    }

    /// Fills `out` with N(0, 1) draws using the Box–Muller transform.
    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (z0, z1) = self.box_muller();
            pair[0] = z0;
            pair[1] = z1;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.box_muller().0;
        }
    }

    pub fn gaussian(&mut self) -> f64 {
        self.box_muller().0
    }

    fn box_muller(&mut self) -> (f64, f64) {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }
}

/// I.i.d. standard normal tensor of the given shape.
pub fn sample_gaussian(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    rng.fill_gaussian(t.data_mut());
    t
}
