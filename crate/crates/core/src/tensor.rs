//! Dense image and latent containers, the space-to-depth codec, and bicubic
//! resampling.
//!
//! All buffers are row-major and channel-last: the value for pixel `(x, y)`
//! and channel `c` lives at `(y * width + x) * channels + c`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("buffer holds {actual} values but {width}x{height}x{channels} needs {expected}")]
    LengthMismatch {
        width: usize,
        height: usize,
        channels: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("zero-sized dimension ({width}x{height}x{channels})")]
    ZeroDimension {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("image {axis} {size} is not divisible by spatial factor {factor}")]
    NotDivisible {
        axis: &'static str,
        size: usize,
        factor: usize,
    },
    #[error("latent has {channels} channels, not divisible by factor^2 = {factor_sq}")]
    ChannelsNotDivisible { channels: usize, factor_sq: usize },
    #[error("spatial factor must be at least 1")]
    InvalidFactor,
}

fn check_shape(width: usize, height: usize, channels: usize, len: usize) -> Result<(), TensorError> {
    if width == 0 || height == 0 || channels == 0 {
        return Err(TensorError::ZeroDimension {
            width,
            height,
            channels,
        });
    }
    let expected = width * height * channels;
    if len != expected {
        return Err(TensorError::LengthMismatch {
            width,
            height,
            channels,
            expected,
            actual: len,
        });
    }
    Ok(())
}

fn check_finite(data: &[f64]) -> Result<(), TensorError> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite { index }),
        None => Ok(()),
    }
}

/// An image with values in `[0, 1]`.
///
/// Values are clamped on construction, so every `ImageGrid` satisfies the
/// range invariant regardless of where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self, TensorError> {
        check_shape(width, height, channels, data.len())?;
        check_finite(&data)?;
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self, TensorError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Build an image from a per-pixel function returning one value per channel.
    pub fn from_fn<F>(width: usize, height: usize, channels: usize, mut f: F) -> Result<Self, TensorError>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Copy out the rectangle `[x0, x0+w) x [y0, y0+h)`.
    ///
    /// Panics if the rectangle is not inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ImageGrid {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        ImageGrid {
            width: w,
            height: h,
            channels: c,
            data,
        }
    }

    /// Luminance-like channel mean per pixel; identity for single-channel images.
    pub fn to_gray(&self) -> Vec<f64> {
        let c = self.channels;
        self.data
            .chunks_exact(c)
            .map(|px| px.iter().sum::<f64>() / c as f64)
            .collect()
    }
}

/// A real-valued latent field. Unlike images, latents are not clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        check_shape(width, height, channels, data.len())?;
        check_finite(&data)?;
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self, TensorError> {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self, TensorError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Skips validation; callers guarantee shape and finiteness.
    pub(crate) fn from_parts(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Elementwise `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &LatentGrid, b: f64) -> LatentGrid {
        assert_eq!(self.dims(), other.dims(), "axpby shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        LatentGrid::from_parts(self.width, self.height, self.channels, data)
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> f64 {
        assert_eq!(self.dims(), other.dims(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// The spatial compression of the image/latent codec (8 for SD-class VAEs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CodecSpec {
    pub spatial_factor: usize,
}

impl CodecSpec {
    pub fn new(spatial_factor: usize) -> Result<Self, TensorError> {
        if spatial_factor == 0 {
            return Err(TensorError::InvalidFactor);
        }
        Ok(Self { spatial_factor })
    }

    pub fn latent_channels(&self, image_channels: usize) -> usize {
        image_channels * self.spatial_factor * self.spatial_factor
    }
}

impl Default for CodecSpec {
    fn default() -> Self {
        Self { spatial_factor: 8 }
    }
}

/// Space-to-depth: every `f x f` pixel block becomes one latent cell with
/// `channels * f^2` channels ordered `(dy, dx, c)`.
pub fn encode(image: &ImageGrid, codec: CodecSpec) -> Result<LatentGrid, TensorError> {
    let f = codec.spatial_factor;
    if f == 0 {
        return Err(TensorError::InvalidFactor);
    }
    if !image.width.is_multiple_of(f) {
        return Err(TensorError::NotDivisible {
            axis: "width",
            size: image.width,
            factor: f,
        });
    }
    if !image.height.is_multiple_of(f) {
        return Err(TensorError::NotDivisible {
            axis: "height",
            size: image.height,
            factor: f,
        });
    }
    let (lw, lh, c) = (image.width / f, image.height / f, image.channels);
    let mut data = Vec::with_capacity(image.data.len());
    for ly in 0..lh {
        for lx in 0..lw {
            for dy in 0..f {
                let row = (ly * f + dy) * image.width + lx * f;
                data.extend_from_slice(&image.data[row * c..(row + f) * c]);
            }
        }
    }
    Ok(LatentGrid::from_parts(lw, lh, c * f * f, data))
}

/// Inverse of [`encode`]. The result is clamped to `[0, 1]` like any image.
pub fn decode(latent: &LatentGrid, codec: CodecSpec) -> Result<ImageGrid, TensorError> {
    let f = codec.spatial_factor;
    if f == 0 {
        return Err(TensorError::InvalidFactor);
    }
    let f2 = f * f;
    if !latent.channels.is_multiple_of(f2) {
        return Err(TensorError::ChannelsNotDivisible {
            channels: latent.channels,
            factor_sq: f2,
        });
    }
    let c = latent.channels / f2;
    let (w, h) = (latent.width * f, latent.height * f);
    let mut data = vec![0.0; w * h * c];
    for ly in 0..latent.height {
        for lx in 0..latent.width {
            let cell = (ly * latent.width + lx) * latent.channels;
            for dy in 0..f {
                let row = (ly * f + dy) * w + lx * f;
                let src = &latent.data[cell + dy * f * c..cell + (dy + 1) * f * c];
                data[row * c..(row + f) * c].copy_from_slice(src);
            }
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(ImageGrid {
        width: w,
        height: h,
        channels: c,
        data,
    })
}

/// Catmull-Rom kernel (a = -0.5).
fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x < 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// Symmetric reflection (`cba|abc|cba`), valid for any integer offset.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

struct Taps {
    index: [usize; 4],
    weight: [f64; 4],
}

fn taps(src_len: usize, dst_len: usize) -> Vec<Taps> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|d| {
            let s = (d as f64 + 0.5) * scale - 0.5;
            let base = s.floor();
            let t = s - base;
            let base = base as isize;
            let mut index = [0; 4];
            let mut weight = [0.0; 4];
            for k in 0..4 {
                index[k] = reflect(base - 1 + k as isize, src_len);
                weight[k] = cubic(t - (k as f64 - 1.0));
            }
            Taps { index, weight }
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("resize target must be at least 1x1, got {width}x{height}")]
pub struct ZeroSizeError {
    pub width: usize,
    pub height: usize,
}

/// Separable Catmull-Rom bicubic resampling with symmetric border reflection
/// and half-pixel centre alignment. No antialiasing prefilter is applied on
/// downscale.
pub fn bicubic_resize(image: &ImageGrid, new_width: usize, new_height: usize) -> Result<ImageGrid, ZeroSizeError> {
    if new_width == 0 || new_height == 0 {
        return Err(ZeroSizeError {
            width: new_width,
            height: new_height,
        });
    }
    let c = image.channels;
    let xt = taps(image.width, new_width);
    let yt = taps(image.height, new_height);

    // horizontal pass: height x new_width
    let mut tmp = vec![0.0; image.height * new_width * c];
    for y in 0..image.height {
        let src = &image.data[y * image.width * c..(y + 1) * image.width * c];
        let dst = &mut tmp[y * new_width * c..(y + 1) * new_width * c];
        for (x, tap) in xt.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += tap.weight[k] * src[tap.index[k] * c + ch];
                }
                dst[x * c + ch] = acc;
            }
        }
    }

    let mut out = vec![0.0; new_height * new_width * c];
    let row_len = new_width * c;
    for (y, tap) in yt.iter().enumerate() {
        let dst = &mut out[y * row_len..(y + 1) * row_len];
        for k in 0..4 {
            let w = tap.weight[k];
            let src = &tmp[tap.index[k] * row_len..(tap.index[k] + 1) * row_len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(ImageGrid {
        width: new_width,
        height: new_height,
        channels: c,
        data: out,
    })
}
