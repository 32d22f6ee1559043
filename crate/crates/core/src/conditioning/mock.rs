//! A deterministic tagger driven by local patch statistics.
//!
//! Each patch receives one tag from each of five families, plus an
//! orientation tag when the patch has enough edges:
//!
//! | family     | statistic                               | tags                                   |
//! |------------|-----------------------------------------|----------------------------------------|
//! | texture    | luminance variance                      | flat, smooth, textured, busy           |
//! | edges      | fraction of strong-gradient pixels      | soft, edged, detailed                  |
//! | tint       | spread and argmax of channel means      | neutral, reddish, greenish, bluish     |
//! | brightness | mean luminance                          | dark, mid, bright                      |
//! | saturation | mean per-pixel channel range            | grayscale, muted, vivid                |
//! | orientation| ratio of summed \|gx\| to summed \|gy\| | horizontal, vertical, isotropic        |

use super::{ExtractorError, PromptExtractor};
use crate::tensor::ImageGrid;

pub const VARIANCE_FLAT: f64 = 1e-5;
pub const VARIANCE_SMOOTH: f64 = 1e-3;
pub const VARIANCE_TEXTURED: f64 = 1e-2;
/// Gradient magnitude above which a pixel counts as an edge.
pub const EDGE_MAGNITUDE: f64 = 0.08;
pub const EDGE_SOFT: f64 = 0.01;
pub const EDGE_EDGED: f64 = 0.2;
pub const TINT_SPREAD: f64 = 0.04;
pub const BRIGHTNESS_DARK: f64 = 1.0 / 3.0;
pub const BRIGHTNESS_BRIGHT: f64 = 2.0 / 3.0;
pub const SATURATION_GRAY: f64 = 0.02;
pub const SATURATION_MUTED: f64 = 0.15;
pub const ORIENTATION_RATIO: f64 = 1.5;

/// Summary statistics the tag buckets are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchStats {
    pub mean_luma: f64,
    pub luma_variance: f64,
    pub edge_fraction: f64,
    pub sum_abs_gx: f64,
    pub sum_abs_gy: f64,
    pub channel_means: [f64; 3],
    pub mean_saturation: f64,
}

fn luma(px: &[f64]) -> f64 {
    match px.len() {
        3 => 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2],
        n => px.iter().sum::<f64>() / n as f64,
    }
}

pub fn patch_stats(patch: &ImageGrid) -> PatchStats {
    let (w, h, c) = (patch.width(), patch.height(), patch.channels());
    let n = (w * h) as f64;
    let l: Vec<f64> = patch.data().chunks_exact(c).map(luma).collect();
    let mean_luma = l.iter().sum::<f64>() / n;
    let luma_variance = l.iter().map(|v| (v - mean_luma).powi(2)).sum::<f64>() / n;

    let mut edges = 0usize;
    let (mut sum_abs_gx, mut sum_abs_gy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            // forward differences, zero at the far border
            let gx = if x + 1 < w { l[y * w + x + 1] - l[y * w + x] } else { 0.0 };
            let gy = if y + 1 < h { l[(y + 1) * w + x] - l[y * w + x] } else { 0.0 };
            sum_abs_gx += gx.abs();
            sum_abs_gy += gy.abs();
            if (gx * gx + gy * gy).sqrt() > EDGE_MAGNITUDE {
                edges += 1;
            }
        }
    }

    let mut channel_means = [0.0; 3];
    let mut mean_saturation = 0.0;
    for px in patch.data().chunks_exact(c) {
        if c == 3 {
            for k in 0..3 {
                channel_means[k] += px[k];
            }
            let max = px.iter().cloned().fold(f64::MIN, f64::max);
            let min = px.iter().cloned().fold(f64::MAX, f64::min);
            mean_saturation += max - min;
        } else {
            let v = luma(px);
            channel_means = [channel_means[0] + v, channel_means[1] + v, channel_means[2] + v];
        }
    }
    for m in &mut channel_means {
        *m /= n;
    }
    PatchStats {
        mean_luma,
        luma_variance,
        edge_fraction: edges as f64 / n,
        sum_abs_gx,
        sum_abs_gy,
        channel_means,
        mean_saturation: mean_saturation / n,
    }
}

/// Map statistics to tags; the pure bucketing half of [`MockTagger`].
pub fn tags_for(stats: &PatchStats) -> Vec<&'static str> {
    let mut tags = Vec::with_capacity(6);
    tags.push(match stats.luma_variance {
        v if v < VARIANCE_FLAT => "flat",
        v if v < VARIANCE_SMOOTH => "smooth",
        v if v < VARIANCE_TEXTURED => "textured",
        _ => "busy",
    });
    tags.push(match stats.edge_fraction {
        e if e < EDGE_SOFT => "soft",
        e if e < EDGE_EDGED => "edged",
        _ => "detailed",
    });
    let [r, g, b] = stats.channel_means;
    let spread = r.max(g).max(b) - r.min(g).min(b);
    tags.push(if spread < TINT_SPREAD {
        "neutral"
    } else if r >= g && r >= b {
        "reddish"
    } else if g >= b {
        "greenish"
    } else {
        "bluish"
    });
    tags.push(match stats.mean_luma {
        m if m < BRIGHTNESS_DARK => "dark",
        m if m > BRIGHTNESS_BRIGHT => "bright",
        _ => "mid",
    });
    tags.push(match stats.mean_saturation {
        s if s < SATURATION_GRAY => "grayscale",
        s if s < SATURATION_MUTED => "muted",
        _ => "vivid",
    });
    if stats.edge_fraction >= EDGE_SOFT {
        let (gx, gy) = (stats.sum_abs_gx, stats.sum_abs_gy);
        tags.push(if gy > ORIENTATION_RATIO * gx {
            "horizontal"
        } else if gx > ORIENTATION_RATIO * gy {
            "vertical"
        } else {
            "isotropic"
        });
    }
    tags
}

/// Statistics-bucket tagger. Pure per patch, so safe to call concurrently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockTagger {
    pub native_size: Option<(usize, usize)>,
}

impl Default for MockTagger {
    fn default() -> Self {
        Self {
            native_size: Some((512, 512)),
        }
    }
}

impl PromptExtractor for MockTagger {
    fn extract(&self, patch: &ImageGrid) -> Result<Vec<String>, ExtractorError> {
        Ok(tags_for(&patch_stats(patch)).into_iter().map(String::from).collect())
    }

    fn native_size(&self) -> Option<(usize, usize)> {
        self.native_size
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}
