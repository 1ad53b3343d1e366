//! Counter-based random numbers.
//!
//! Every Gaussian or uniform draw is a pure function of
//! `(run seed, particle id, step index, stream slot, coordinate)`, computed
//! with the Philox4x32-10 block function. Nothing is stateful, so draws do
//! not depend on evaluation order or on how particles are split across
//! worker threads.

use std::f64::consts::TAU;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 block function with 10 rounds.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
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

/// SplitMix64 finalizer, used to derive child seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent draw families. Two draws that differ only in stream are
/// independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    /// Brownian increments multiplying the gradient-noise square root.
    Diffusion = 0,
    /// Brownian increments of the Langevin temperature term.
    Langevin = 1,
    /// Data-atom draws of the SGD engines.
    Data = 2,
    /// Initial positions.
    Init = 3,
    /// Random projection directions.
    Projection = 4,
    /// Anything else that needs an auxiliary stream (resampling, tests).
    Auxiliary = 5,
}

/// Id used for draws that are shared by every particle (SGD data samples).
pub const SHARED_ID: u64 = u64::MAX >> 16;

#[inline(always)]
fn to_unit_open_closed(x: u64) -> f64 {
    // (0, 1]
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline(always)]
fn to_unit(x: u64) -> f64 {
    // [0, 1)
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Seeded access to the counter-based generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoisePlan {
    seed: u64,
}

impl NoisePlan {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A plan whose draws are independent of this one, e.g. one per repetition.
    pub fn child(&self, tag: u64) -> NoisePlan {
        NoisePlan::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    #[inline]
    fn block(&self, stream: Stream, id: u64, step: u64, block: u32) -> [u32; 4] {
        debug_assert!(id <= SHARED_ID, "particle id out of range");
        debug_assert!(step < (1u64 << 48), "step index out of range");
        debug_assert!(block < (1 << 16), "block index out of range");
        let counter = [
            id as u32,
            ((id >> 32) as u32 & 0xFFFF) | ((stream as u32) << 16),
            step as u32,
            ((step >> 32) as u32 & 0xFFFF) | (block << 16),
        ];
        philox4x32_10(counter, [self.seed as u32, (self.seed >> 32) as u32])
    }

    #[inline]
    fn words(&self, stream: Stream, id: u64, step: u64, block: u32) -> (u64, u64) {
        let r = self.block(stream, id, step, block);
        (
            (r[0] as u64) | ((r[1] as u64) << 32),
            (r[2] as u64) | ((r[3] as u64) << 32),
        )
    }

    /// Uniform on [0, 1). `index` selects among independent uniforms at the
    /// same `(stream, id, step)`.
    #[inline]
    pub fn uniform(&self, stream: Stream, id: u64, step: u64, index: usize) -> f64 {
        let (a, b) = self.words(stream, id, step, (index / 2) as u32);
        to_unit(if index % 2 == 0 { a } else { b })
    }

    /// Standard normal coordinate `coord` of the draw at `(stream, id, step)`.
    #[inline]
    pub fn normal(&self, stream: Stream, id: u64, step: u64, coord: usize) -> f64 {
        let (a, b) = self.words(stream, id, step, (coord / 2) as u32);
        let r = (-2.0 * to_unit_open_closed(a).ln()).sqrt();
        let theta = TAU * to_unit(b);
        if coord % 2 == 0 {
            r * theta.cos()
        } else {
            r * theta.sin()
        }
    }

    /// Fills `out` with a standard normal vector (Box-Muller pairs).
    #[inline]
    pub fn normals(&self, stream: Stream, id: u64, step: u64, out: &mut [f64]) {
        for (pair, chunk) in out.chunks_mut(2).enumerate() {
            let (a, b) = self.words(stream, id, step, pair as u32);
            let r = (-2.0 * to_unit_open_closed(a).ln()).sqrt();
            let (s, c) = (TAU * to_unit(b)).sin_cos();
            chunk[0] = r * c;
            if chunk.len() > 1 {
                chunk[1] = r * s;
            }
        }
    }

    /// Standard normal vector for coarse step `step` built from `refine`
    /// fine-grid draws, `sum_j Z[step * refine + j] / sqrt(refine)`.
    ///
    /// Runs at `dt` with refinement `r` and at `dt / r` with refinement 1
    /// see the same Brownian path.
    pub fn brownian(&self, stream: Stream, id: u64, step: u64, refine: u32, out: &mut [f64]) {
        if refine <= 1 {
            self.normals(stream, id, step, out);
            return;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = [0.0f64; 16];
        let scale = 1.0 / (refine as f64).sqrt();
        for j in 0..refine as u64 {
            let fine = step * refine as u64 + j;
            for (chunk_idx, chunk) in out.chunks_mut(16).enumerate() {
                let tmp = &mut buf[..chunk.len()];
                if chunk_idx == 0 {
                    self.normals(stream, id, fine, tmp);
                } else {
                    for (c, v) in tmp.iter_mut().enumerate() {
                        *v = self.normal(stream, id, fine, chunk_idx * 16 + c);
                    }
                }
                for (o, v) in chunk.iter_mut().zip(tmp.iter()) {
                    *o += v * scale;
                }
            }
        }
    }
}
