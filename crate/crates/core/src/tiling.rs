//! Overlapping window plans over a latent grid and the crops they induce.
//!
//! A [`TilePlan`] is the Cartesian product of two per-axis origin lists.
//! Along each axis the origins are `0, stride, 2*stride, ...` for as long as
//! the window fits; if the last regular window stops short of the far edge,
//! one extra window clamped to `parent - window` is appended so that every
//! cell is covered while all windows keep the same size.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::tensor::{CodecSpec, ImageGrid, LatentGrid};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TilingError {
    #[error("{axis}: window {window} is larger than parent {parent}")]
    WindowLargerThanParent {
        axis: &'static str,
        window: usize,
        parent: usize,
    },
    #[error("{axis}: window and parent sizes must be non-zero")]
    ZeroSize { axis: &'static str },
    #[error("stride must be non-zero")]
    ZeroStride,
    #[error("{axis}: stride {stride} exceeds window {window}; adjacent windows would not overlap")]
    StrideExceedsWindow {
        axis: &'static str,
        stride: usize,
        window: usize,
    },
    #[error("window {index} at ({x}, {y}) size {w}x{h} lies outside the {parent_w}x{parent_h} grid")]
    OutOfBounds {
        index: usize,
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        parent_w: usize,
        parent_h: usize,
    },
}

/// One crop mapping: a window-sized region of the parent latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct WindowSpec {
    pub index: usize,
    pub origin_x: usize,
    pub origin_y: usize,
    pub width: usize,
    pub height: usize,
}

impl WindowSpec {
    /// The window covering a whole `width x height` grid.
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            index: 0,
            origin_x: 0,
            origin_y: 0,
            width,
            height,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.origin_x && x < self.origin_x + self.width && y >= self.origin_y && y < self.origin_y + self.height
    }

    pub fn check_inside(&self, parent_w: usize, parent_h: usize) -> Result<(), TilingError> {
        if self.width == 0
            || self.height == 0
            || self.origin_x + self.width > parent_w
            || self.origin_y + self.height > parent_h
        {
            return Err(TilingError::OutOfBounds {
                index: self.index,
                x: self.origin_x,
                y: self.origin_y,
                w: self.width,
                h: self.height,
                parent_w,
                parent_h,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TilePlan {
    pub parent_width: usize,
    pub parent_height: usize,
    pub window_width: usize,
    pub window_height: usize,
    pub stride: usize,
    pub windows: Vec<WindowSpec>,
}

/// Per-axis origins: regular multiples of `stride`, plus a clamped tail window.
pub fn axis_origins(parent: usize, window: usize, stride: usize) -> Vec<usize> {
    let mut origins = Vec::new();
    let mut o = 0;
    while o + window <= parent {
        origins.push(o);
        o += stride;
    }
    let last = parent - window;
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    origins
}

fn check_axis(axis: &'static str, parent: usize, window: usize, stride: usize, allow_wide: bool) -> Result<(), TilingError> {
    if parent == 0 || window == 0 {
        return Err(TilingError::ZeroSize { axis });
    }
    if window > parent {
        return Err(TilingError::WindowLargerThanParent { axis, window, parent });
    }
    if stride == 0 {
        return Err(TilingError::ZeroStride);
    }
    if stride > window && parent > window && !allow_wide {
        return Err(TilingError::StrideExceedsWindow { axis, stride, window });
    }
    Ok(())
}

/// Plan overlapping windows over a `parent_w x parent_h` latent.
pub fn plan_tiles(
    parent_w: usize,
    parent_h: usize,
    win_w: usize,
    win_h: usize,
    stride: usize,
) -> Result<TilePlan, TilingError> {
    plan_tiles_with(parent_w, parent_h, win_w, win_h, stride, false)
}

/// Like [`plan_tiles`], but `allow_wide_stride` lets `stride > window` through
/// for ablations. Such plans can leave gaps; fusing them fails on the first
/// uncovered cell.
pub fn plan_tiles_with(
    parent_w: usize,
    parent_h: usize,
    win_w: usize,
    win_h: usize,
    stride: usize,
    allow_wide_stride: bool,
) -> Result<TilePlan, TilingError> {
    check_axis("x", parent_w, win_w, stride, allow_wide_stride)?;
    check_axis("y", parent_h, win_h, stride, allow_wide_stride)?;
    let xs = axis_origins(parent_w, win_w, stride);
    let ys = axis_origins(parent_h, win_h, stride);
    let mut windows = Vec::with_capacity(xs.len() * ys.len());
    for &origin_y in &ys {
        for &origin_x in &xs {
            windows.push(WindowSpec {
                index: windows.len(),
                origin_x,
                origin_y,
                width: win_w,
                height: win_h,
            });
        }
    }
    Ok(TilePlan {
        parent_width: parent_w,
        parent_height: parent_h,
        window_width: win_w,
        window_height: win_h,
        stride,
        windows,
    })
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn windows_per_row(&self) -> usize {
        self.windows.iter().filter(|w| w.origin_y == 0).count()
    }

    pub fn windows_per_column(&self) -> usize {
        self.windows.iter().filter(|w| w.origin_x == 0).count()
    }

    /// Number of windows covering each parent cell, row-major.
    pub fn coverage_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.parent_width * self.parent_height];
        for w in &self.windows {
            for y in w.origin_y..w.origin_y + w.height {
                let row = y * self.parent_width;
                for c in &mut counts[row + w.origin_x..row + w.origin_x + w.width] {
                    *c += 1;
                }
            }
        }
        counts
    }

    /// Human-readable listing of the plan, one window per line.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TilePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "plan parent={}x{} window={}x{} stride={} windows={} ({}x{})",
            self.parent_width,
            self.parent_height,
            self.window_width,
            self.window_height,
            self.stride,
            self.len(),
            self.windows_per_row(),
            self.windows_per_column()
        )?;
        for w in &self.windows {
            writeln!(
                f,
                "  window {:>4}: origin=({}, {}) size={}x{}",
                w.index, w.origin_x, w.origin_y, w.width, w.height
            )?;
        }
        Ok(())
    }
}

/// Exact copy of the window region.
pub fn crop(parent: &LatentGrid, window: &WindowSpec) -> Result<LatentGrid, TilingError> {
    window.check_inside(parent.width(), parent.height())?;
    let c = parent.channels();
    let pw = parent.width();
    let src = parent.data();
    let mut data = Vec::with_capacity(window.width * window.height * c);
    for y in window.origin_y..window.origin_y + window.height {
        let start = (y * pw + window.origin_x) * c;
        data.extend_from_slice(&src[start..start + window.width * c]);
    }
    Ok(LatentGrid::from_parts(window.width, window.height, c, data))
}

/// Pixel rectangle in image space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ImageRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// The image region a latent window decodes to.
pub fn image_patch_for(window: &WindowSpec, codec: CodecSpec) -> ImageRect {
    let f = codec.spatial_factor;
    ImageRect {
        x: window.origin_x * f,
        y: window.origin_y * f,
        width: window.width * f,
        height: window.height * f,
    }
}

pub fn crop_image(image: &ImageGrid, rect: ImageRect) -> ImageGrid {
    image.crop(rect.x, rect.y, rect.width, rect.height)
}
