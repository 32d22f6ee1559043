//! Overlap averaging of per-window latents back into the parent grid.
//!
//! Every deposit adds its values into a double-precision sum buffer and its
//! weight (1.0 per cell unless a feather mask is supplied) into a per-cell
//! weight buffer. [`FusionAccumulator::finalize`] divides the two.

use thiserror::Error;

use crate::tensor::LatentGrid;
use crate::tiling::{TilingError, WindowSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("window {index} is {window_w}x{window_h}x{channels} but values are {values_w}x{values_h}x{values_c}")]
    ShapeMismatch {
        index: usize,
        window_w: usize,
        window_h: usize,
        channels: usize,
        values_w: usize,
        values_h: usize,
        values_c: usize,
    },
    #[error(transparent)]
    OutOfBounds(#[from] TilingError),
    #[error("feather mask has {actual} weights, window needs {expected}")]
    MaskLength { expected: usize, actual: usize },
    #[error("feather weights must be finite and non-negative")]
    BadMask,
    #[error("cell ({x}, {y}) is not covered by any window")]
    Uncovered { x: usize, y: usize },
    #[error("accumulators have different shapes")]
    MergeMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionAccumulator {
    width: usize,
    height: usize,
    channels: usize,
    sum: Vec<f64>,
    weight: Vec<f64>,
}

impl FusionAccumulator {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            sum: vec![0.0; width * height * channels],
            weight: vec![0.0; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn sums(&self) -> &[f64] {
        &self.sum
    }

    fn check(&self, window: &WindowSpec, values: &LatentGrid) -> Result<(), FusionError> {
        window.check_inside(self.width, self.height)?;
        if values.dims() != (window.width, window.height, self.channels) {
            return Err(FusionError::ShapeMismatch {
                index: window.index,
                window_w: window.width,
                window_h: window.height,
                channels: self.channels,
                values_w: values.width(),
                values_h: values.height(),
                values_c: values.channels(),
            });
        }
        Ok(())
    }

    /// Add `values` over the window region with unit weight per cell.
    pub fn deposit(&mut self, window: &WindowSpec, values: &LatentGrid) -> Result<(), FusionError> {
        self.check(window, values)?;
        let c = self.channels;
        let src = values.data();
        for wy in 0..window.height {
            let y = window.origin_y + wy;
            let row = y * self.width + window.origin_x;
            let dst = &mut self.sum[row * c..(row + window.width) * c];
            let s = &src[wy * window.width * c..(wy + 1) * window.width * c];
            for (d, v) in dst.iter_mut().zip(s) {
                *d += v;
            }
            for w in &mut self.weight[row..row + window.width] {
                *w += 1.0;
            }
        }
        Ok(())
    }

    /// Feathered deposit: `mask` holds one non-negative weight per window cell
    /// (row-major). Values are scaled by their cell weight before summing.
    pub fn deposit_weighted(&mut self, window: &WindowSpec, values: &LatentGrid, mask: &[f64]) -> Result<(), FusionError> {
        self.check(window, values)?;
        let expected = window.width * window.height;
        if mask.len() != expected {
            return Err(FusionError::MaskLength {
                expected,
                actual: mask.len(),
            });
        }
        if mask.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(FusionError::BadMask);
        }
        let c = self.channels;
        let src = values.data();
        for wy in 0..window.height {
            let y = window.origin_y + wy;
            for wx in 0..window.width {
                let cell = y * self.width + window.origin_x + wx;
                let m = mask[wy * window.width + wx];
                let s = &src[(wy * window.width + wx) * c..(wy * window.width + wx + 1) * c];
                for (d, v) in self.sum[cell * c..(cell + 1) * c].iter_mut().zip(s) {
                    *d += m * v;
                }
                self.weight[cell] += m;
            }
        }
        Ok(())
    }

    /// Fold another partial accumulator into this one.
    pub fn merge(&mut self, other: &FusionAccumulator) -> Result<(), FusionError> {
        if self.dims() != other.dims() {
            return Err(FusionError::MergeMismatch);
        }
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        Ok(())
    }

    /// Elementwise `sum / weight`. Fails on the first (row-major) cell that
    /// received no weight.
    pub fn finalize(self) -> Result<LatentGrid, FusionError> {
        if let Some(i) = self.weight.iter().position(|&w| w <= 0.0) {
            return Err(FusionError::Uncovered {
                x: i % self.width,
                y: i / self.width,
            });
        }
        let c = self.channels;
        let mut data = self.sum;
        for (cell, &w) in self.weight.iter().enumerate() {
            for v in &mut data[cell * c..(cell + 1) * c] {
                *v /= w;
            }
        }
        Ok(LatentGrid::from_parts(self.width, self.height, c, data))
    }
}
