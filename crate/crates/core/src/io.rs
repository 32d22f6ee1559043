//! PNG load/save for [`ImageGrid`].

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use thiserror::Error;

use crate::tensor::{ImageGrid, TensorError};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot save image with {0} channels (expected 1 or 3)")]
    UnsupportedChannels(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    Eight,
    #[default]
    Sixteen,
}

/// Load a raster image, normalising to `[0, 1]`.
///
/// 16-bit sources keep full precision; alpha is dropped. Grayscale stays
/// single-channel, everything else becomes RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid, ImageIoError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| ImageIoError::Codec {
        path: path.display().to_string(),
        source,
    })?;
    Ok(from_dynamic(img)?)
}

fn from_dynamic(img: DynamicImage) -> Result<ImageGrid, TensorError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => {
            ImageGrid::new(w, h, 1, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLumaA8(_) => from_dynamic(DynamicImage::ImageLuma8(img.to_luma8())),
        DynamicImage::ImageLuma16(buf) => {
            ImageGrid::new(w, h, 1, buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        DynamicImage::ImageLumaA16(_) => from_dynamic(DynamicImage::ImageLuma16(img.to_luma16())),
        DynamicImage::ImageRgb16(buf) => {
            ImageGrid::new(w, h, 3, buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        DynamicImage::ImageRgba16(_) => from_dynamic(DynamicImage::ImageRgb16(img.to_rgb16())),
        other => {
            let buf = other.to_rgb8();
            ImageGrid::new(w, h, 3, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
    }
}

/// Quantise `[0, 1]` to `0..=max`, rounding half to even.
pub fn quantize(v: f64, max: f64) -> f64 {
    (v * max).round_ties_even()
}

/// Save as PNG at the given bit depth. Writes to a temporary sibling first and
/// renames into place.
pub fn save_image(image: &ImageGrid, path: impl AsRef<Path>, depth: BitDepth) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    let dynamic = to_dynamic(image, depth)?;
    let tmp = path.with_extension("png.tmp");
    dynamic
        .save_with_format(&tmp, image::ImageFormat::Png)
        .map_err(|source| ImageIoError::Codec {
            path: tmp.display().to_string(),
            source,
        })?;
    std::fs::rename(&tmp, path).map_err(|source| ImageIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_dynamic(image: &ImageGrid, depth: BitDepth) -> Result<DynamicImage, ImageIoError> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let dynamic = match (image.channels(), depth) {
        (1, BitDepth::Eight) => {
            let raw = image.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
            DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("sized buffer"))
        }
        (1, BitDepth::Sixteen) => {
            let raw = image.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect();
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("sized buffer"))
        }
        (3, BitDepth::Eight) => {
            let raw = image.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
            DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("sized buffer"))
        }
        (3, BitDepth::Sixteen) => {
            let raw = image.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect();
            DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("sized buffer"))
        }
        (c, _) => return Err(ImageIoError::UnsupportedChannels(c)),
    };
    Ok(dynamic)
}
