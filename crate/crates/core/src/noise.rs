//! Reproducible Gaussian latents from a counter-based generator.
//!
//! Cell `i` of a field is a pure function of `(seed, stream, i)`, so the same
//! field comes out regardless of platform, traversal order, or thread count.
//! The bit source is Philox4x32-10; pairs of 53-bit uniforms feed Box-Muller.

use rayon::prelude::*;

use crate::tensor::LatentGrid;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut ctr = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0];
    }
    ctr
}

/// Uniform in (0, 1] with 53 bits of resolution.
#[inline]
fn open_unit(hi: u32, lo: u32) -> f64 {
    let bits = ((hi as u64) << 32 | lo as u64) >> 11;
    (bits as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
}

/// Counter-based standard normal stream keyed by a seed and a stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianStream {
    key: [u32; 2],
    stream: u64,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            key: [seed as u32, (seed >> 32) as u32],
            stream,
        }
    }

    /// The `i`-th standard normal draw of this stream.
    pub fn sample(&self, i: u64) -> f64 {
        let block = i / 2;
        let out = philox4x32_10(
            [block as u32, (block >> 32) as u32, self.stream as u32, (self.stream >> 32) as u32],
            self.key,
        );
        let u1 = open_unit(out[0], out[1]);
        let u2 = open_unit(out[2], out[3]);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        if i.is_multiple_of(2) {
            r * theta.cos()
        } else {
            r * theta.sin()
        }
    }

    pub fn fill(&self, out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, v)| *v = self.sample(i as u64));
    }
}

/// Standard normal latent of the given dims; stream 0 of `seed`.
pub fn seeded_noise(width: usize, height: usize, channels: usize, seed: u64) -> LatentGrid {
    seeded_noise_stream(width, height, channels, seed, 0)
}

pub fn seeded_noise_stream(width: usize, height: usize, channels: usize, seed: u64, stream: u64) -> LatentGrid {
    let mut data = vec![0.0; width * height * channels];
    GaussianStream::new(seed, stream).fill(&mut data);
    LatentGrid::from_parts(width, height, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors published with the Random123 library.
    #[test]
    fn philox_known_answers() {
        assert_eq!(philox4x32_10([0; 4], [0; 2]), [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]);
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32_10([0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344], [0xa409_3822, 0x299f_31d0]),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn same_seed_same_bits() {
        let a = seeded_noise(7, 5, 3, 42);
        let b = seeded_noise(7, 5, 3, 42);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn prefix_stable_across_shapes() {
        // the field is indexed by flat position only
        let a = seeded_noise(4, 4, 1, 9);
        let b = seeded_noise(8, 4, 1, 9);
        assert_eq!(&a.data()[..4], &b.data()[..4]);
    }

    #[test]
    fn streams_differ() {
        let a = seeded_noise_stream(16, 16, 1, 1, 0);
        let b = seeded_noise_stream(16, 16, 1, 1, 1);
        assert!(a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count() > 250);
    }
}
