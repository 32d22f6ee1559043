//! Global-vs-local unique tag counts per image, and their CSV export.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::{assign_local_prompts, unique_tag_count, ConditioningError, PromptExtractor};
use crate::tensor::{CodecSpec, ImageGrid};
use crate::tiling::{plan_tiles, TilingError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TagAnalyticsRow {
    pub image_id: String,
    pub global_count: usize,
    pub local_unique_count: usize,
    pub per_window_counts: Vec<usize>,
    /// Set when the image could not be analysed; counts are then zero.
    pub error: Option<String>,
}

impl TagAnalyticsRow {
    pub fn failed(image_id: impl Into<String>, error: impl ToString) -> Self {
        Self {
            image_id: image_id.into(),
            global_count: 0,
            local_unique_count: 0,
            per_window_counts: vec![],
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Tiling(#[from] TilingError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
    #[error("image {width}x{height} is not a multiple of the codec factor {factor}")]
    Indivisible { width: usize, height: usize, factor: usize },
}

/// Tile `image` in latent geometry and count global vs local tags.
pub fn analyze_image(
    extractor: &dyn PromptExtractor,
    image_id: &str,
    image: &ImageGrid,
    window: usize,
    stride: usize,
    codec: CodecSpec,
) -> Result<TagAnalyticsRow, AnalyticsError> {
    let f = codec.spatial_factor;
    if !image.width().is_multiple_of(f) || !image.height().is_multiple_of(f) {
        return Err(AnalyticsError::Indivisible {
            width: image.width(),
            height: image.height(),
            factor: f,
        });
    }
    let plan = plan_tiles(image.width() / f, image.height() / f, window, window, stride)?;
    let assignment = assign_local_prompts(extractor, image, &plan, codec)?;
    Ok(TagAnalyticsRow {
        image_id: image_id.to_string(),
        global_count: assignment.global.len(),
        local_unique_count: unique_tag_count(&assignment),
        per_window_counts: assignment.per_window.iter().map(|t| t.len()).collect(),
        error: None,
    })
}

/// Histogram of global and local counts over successful rows, keyed by count.
pub fn count_histogram(rows: &[TagAnalyticsRow]) -> BTreeMap<usize, (usize, usize)> {
    let mut hist = BTreeMap::new();
    for r in rows.iter().filter(|r| r.error.is_none()) {
        hist.entry(r.global_count).or_insert((0, 0)).0 += 1;
        hist.entry(r.local_unique_count).or_insert((0, 0)).1 += 1;
    }
    hist
}

/// Write one row per image in input order, then a histogram section whose
/// rows start with `#histogram`.
pub fn write_tag_csv<W: Write>(rows: &[TagAnalyticsRow], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["image_id", "global_count", "local_unique_count", "per_window_counts", "status"])?;
    for r in rows {
        let per_window = r
            .per_window_counts
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let status = match &r.error {
            None => "ok".to_string(),
            Some(e) => format!("failed: {e}"),
        };
        w.write_record([
            r.image_id.clone(),
            r.global_count.to_string(),
            r.local_unique_count.to_string(),
            per_window,
            status,
        ])?;
    }
    let hist = count_histogram(rows);
    if !hist.is_empty() {
        w.write_record(["#histogram", "tag_count", "global_images", "local_images"])?;
        for (count, (g, l)) in hist {
            w.write_record(["#histogram".to_string(), count.to_string(), g.to_string(), l.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
