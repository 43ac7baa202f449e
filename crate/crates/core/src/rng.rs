//! Deterministic, splittable random streams.
//!
//! Every stream is addressed by a [`StreamKey`] `(master_seed, path_index,
//! substream)` and generated by the Philox4x64-10 counter-based block cipher:
//! the 256-bit counter is `[block, substream, path_index, 0]` and the 128-bit
//! key is `[master_seed, 0]`. A stream therefore never depends on how many
//! draws any other stream consumed, which is what makes per-path parallelism
//! reproducible.
//!
//! Gaussian draws use the Box–Muller transform: each Philox block yields four
//! uniforms and exactly four normals, so draw counts are fixed in advance.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{domain, Result};
use crate::math;

const PHILOX_M0: u64 = 0xD2E7_470E_E14C_6C93;
const PHILOX_M1: u64 = 0xCA5A_8263_9512_1157;
const PHILOX_W0: u64 = 0x9E37_79B9_7F4A_7C15;
const PHILOX_W1: u64 = 0xBB67_AE85_84CA_A73B;

#[inline]
fn mulhilo(a: u64, b: u64) -> (u64, u64) {
    let p = (a as u128) * (b as u128);
    ((p >> 64) as u64, p as u64)
}

/// The Philox4x64 block function with 10 rounds.
pub fn philox4x64(counter: [u64; 4], key: [u64; 2]) -> [u64; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// SplitMix64 finalizer; used to derive independent master seeds from labels.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a new master seed from `master_seed` and a label (for example the
/// scaling index `n`, or a tag separating reference samples from experiment
/// paths).
pub fn derive_seed(master_seed: u64, label: u64) -> u64 {
    mix64(mix64(master_seed) ^ label.rotate_left(17) ^ 0x5851_F42D_4C95_7F2D)
}

/// Address of one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StreamKey {
    pub master_seed: u64,
    pub path_index: u64,
    pub substream: u64,
}

impl StreamKey {
    pub const fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            master_seed,
            path_index,
            substream: 0,
        }
    }

    pub const fn with_substream(self, substream: u64) -> Self {
        Self { substream, ..self }
    }

    pub fn uniforms(&self) -> UniformStream {
        UniformStream::new(*self)
    }

    pub fn gaussians(&self) -> GaussianStream {
        GaussianStream::new(*self)
    }
}

/// Uniform draws on the open interval (0, 1).
#[derive(Debug, Clone)]
pub struct UniformStream {
    key: StreamKey,
    block: u64,
    buf: [u64; 4],
    pos: usize,
}

impl UniformStream {
    pub fn new(key: StreamKey) -> Self {
        Self {
            key,
            block: 0,
            buf: [0; 4],
            pos: 4,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        if self.pos == 4 {
            self.buf = philox4x64(
                [self.block, self.key.substream, self.key.path_index, 0],
                [self.key.master_seed, 0],
            );
            self.block = self.block.wrapping_add(1);
            self.pos = 0;
        }
        let x = self.buf[self.pos];
        self.pos += 1;
        x
    }

    /// 53-bit uniform strictly inside (0, 1).
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

/// Standard normal draws via Box–Muller.
#[derive(Debug, Clone)]
pub struct GaussianStream {
    uniforms: UniformStream,
    buf: [f64; 4],
    pos: usize,
}

impl GaussianStream {
    pub fn new(key: StreamKey) -> Self {
        Self {
            uniforms: UniformStream::new(key),
            buf: [0.0; 4],
            pos: 4,
        }
    }

    #[inline]
    pub fn next_standard(&mut self) -> f64 {
        if self.pos == 4 {
            for pair in 0..2 {
                let u1 = self.uniforms.next_open01();
                let u2 = self.uniforms.next_open01();
                let radius = math::sqrt(-2.0 * math::ln(u1));
                let (s, c) = math::sin_cos(2.0 * PI * u2);
                self.buf[2 * pair] = radius * c;
                self.buf[2 * pair + 1] = radius * s;
            }
            self.pos = 0;
        }
        let z = self.buf[self.pos];
        self.pos += 1;
        z
    }

    /// Fills `out` with `N(0, std_dev²)` draws.
    #[inline]
    pub fn fill(&mut self, out: &mut [f64], std_dev: f64) {
        for v in out {
            *v = std_dev * self.next_standard();
        }
    }
}

/// `count` i.i.d. `Normal(0, variance)` draws, deterministic in `key`.
pub fn gaussian_increments(key: StreamKey, count: usize, variance: f64) -> Result<Vec<f64>> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(domain("variance must be finite and non-negative"));
    }
    if count == 0 {
        return Err(domain("count must be positive"));
    }
    let mut out = vec![0.0; count];
    if variance > 0.0 {
        key.gaussians().fill(&mut out, math::sqrt(variance));
    }
    Ok(out)
}
