//! Shared helpers for integration tests: seeded RNG, synthetic images, golden
//! transcript loading and brute-force oracles.
#![allow(dead_code)]

use std::path::PathBuf;

use proptest::prelude::RngExt;
use proptest::test_runner::{RngAlgorithm, TestRng};
use tiled_sr::ImageGrid;

pub fn rng(seed: u64) -> TestRng {
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)).to_le_bytes());
    }
    TestRng::from_seed(RngAlgorithm::ChaCha, &bytes)
}

pub fn testdata(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)
}

/// Parse a `.hex` transcript: whitespace-separated bytes, `#` comments.
pub fn read_hex(name: &str) -> Vec<u8> {
    let path = testdata(&format!("protocol/{name}"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .map(|b| u8::from_str_radix(b, 16).unwrap_or_else(|_| panic!("bad hex byte {b:?} in {name}")))
        .collect()
}

pub fn random_image(rng: &mut TestRng, w: usize, h: usize, c: usize) -> ImageGrid {
    let data = (0..w * h * c).map(|_| rng.random::<f64>()).collect();
    ImageGrid::new(w, h, c, data).unwrap()
}

/// Smooth, band-limited colour image; `phase` varies the content.
pub fn smooth_image(w: usize, h: usize, c: usize, phase: f64) -> ImageGrid {
    ImageGrid::from_fn(w, h, c, |x, y, ch| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        let k = ch as f64 + 1.0;
        0.5 + 0.2 * (6.2 * u * k + phase).sin() * (4.1 * v + 0.7 * k).cos() + 0.15 * (9.0 * (u + v) + phase * k).sin()
    })
    .unwrap()
}

/// An image split into four regions of different content: flat colour,
/// stripes, checkerboard, noise and gradients.
pub fn heterogeneous_image(rng: &mut TestRng, size: usize) -> ImageGrid {
    #[derive(Clone, Copy)]
    enum Fill {
        Flat([f64; 3]),
        Stripes { horizontal: bool, period: f64, color: [f64; 3] },
        Checker { cell: usize, color: [f64; 3] },
        Noise { level: f64, base: [f64; 3] },
        Gradient([f64; 3], [f64; 3]),
    }
    let color = |rng: &mut TestRng| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let mut fills = Vec::with_capacity(4);
    for _ in 0..4 {
        let f = match rng.random_range(0..5u32) {
            0 => Fill::Flat(color(rng)),
            1 => Fill::Stripes {
                horizontal: rng.random_bool(0.5),
                period: rng.random_range(4.0..24.0),
                color: color(rng),
            },
            2 => Fill::Checker {
                cell: rng.random_range(2..16usize),
                color: color(rng),
            },
            3 => Fill::Noise {
                level: rng.random_range(0.05..0.5),
                base: color(rng),
            },
            _ => Fill::Gradient(color(rng), color(rng)),
        };
        fills.push(f);
    }
    let sx = rng.random_range(size / 4..3 * size / 4);
    let sy = rng.random_range(size / 4..3 * size / 4);
    let noise: Vec<f64> = (0..size * size).map(|_| rng.random::<f64>() - 0.5).collect();
    ImageGrid::from_fn(size, size, 3, |x, y, c| {
        let region = usize::from(x >= sx) + 2 * usize::from(y >= sy);
        match fills[region] {
            Fill::Flat(col) => col[c],
            Fill::Stripes { horizontal, period, color } => {
                let p = if horizontal { y } else { x } as f64;
                color[c] * (0.5 + 0.5 * (std::f64::consts::TAU * p / period).sin())
            }
            Fill::Checker { cell, color } => {
                if (x / cell + y / cell) % 2 == 0 {
                    color[c]
                } else {
                    1.0 - color[c]
                }
            }
            Fill::Noise { level, base } => base[c] + level * noise[y * size + x],
            Fill::Gradient(a, b) => {
                let t = (x + y) as f64 / (2 * size) as f64;
                a[c] * (1.0 - t) + b[c] * t
            }
        }
    })
    .unwrap()
}

/// Per-cell mean over every window that covers the cell, computed by scanning
/// all windows for each cell. `None` where nothing covers the cell.
pub fn brute_average(
    w: usize,
    h: usize,
    c: usize,
    windows: &[(usize, usize, usize, usize)],
    outputs: &[Vec<f64>],
) -> Vec<Option<Vec<f64>>> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut sum = vec![0.0; c];
            let mut n = 0usize;
            for ((ox, oy, ww, wh), vals) in windows.iter().zip(outputs) {
                if x >= *ox && x < ox + ww && y >= *oy && y < oy + wh {
                    let (lx, ly) = (x - ox, y - oy);
                    for ch in 0..c {
                        sum[ch] += vals[(ly * ww + lx) * c + ch];
                    }
                    n += 1;
                }
            }
            out.push((n > 0).then(|| sum.iter().map(|s| s / n as f64).collect()));
        }
    }
    out
}

pub fn brute_psnr(a: &ImageGrid, b: &ImageGrid) -> f64 {
    let n = a.data().len() as f64;
    let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// SSIM with an 11x11 Gaussian window (sigma 1.5), evaluated at every
/// position where the window fits, averaged over positions and channels.
#[allow(clippy::needless_range_loop)]
pub fn brute_ssim(a: &ImageGrid, b: &ImageGrid) -> f64 {
    const R: usize = 11;
    let mut g = [[0.0f64; R]; R];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let mut acc = 0.0;
    for c in 0..ch {
        let mut plane = 0.0;
        let mut count = 0usize;
        for y0 in 0..=h - R {
            for x0 in 0..=w - R {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..R {
                    for j in 0..R {
                        let wt = g[i][j] / total;
                        let va = a.get(x0 + j, y0 + i, c);
                        let vb = b.get(x0 + j, y0 + i, c);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                plane += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc += plane / count as f64;
    }
    acc / ch as f64
}
