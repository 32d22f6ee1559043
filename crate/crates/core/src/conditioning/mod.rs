//! Tag conditions, the prompt-extractor contract, and per-window prompt
//! assignment.
//!
//! Each window of a [`TilePlan`] gets its own tag list extracted from the
//! image patch it decodes to. A global tag list is extracted from the whole
//! image, resized to the extractor's native input size, and stands in for
//! any window whose own extraction comes back empty.

pub mod analytics;
pub mod mock;

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::tensor::{bicubic_resize, CodecSpec, ImageGrid};
use crate::tiling::{crop_image, image_patch_for, TilePlan};

pub use mock::MockTagger;

/// Failure reported by an extractor implementation.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct ExtractorError(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConditioningError {
    #[error("tag extraction failed for window {window}: {source}")]
    Window {
        window: usize,
        #[source]
        source: ExtractorError,
    },
    #[error("tag extraction failed for the global image: {0}")]
    Global(#[source] ExtractorError),
    #[error("image is {image_w}x{image_h} but the plan needs {expected_w}x{expected_h} (latent {latent_w}x{latent_h} at factor {factor})")]
    GeometryMismatch {
        image_w: usize,
        image_h: usize,
        expected_w: usize,
        expected_h: usize,
        latent_w: usize,
        latent_h: usize,
        factor: usize,
    },
    #[error("empty patch")]
    EmptyPatch,
}

/// Ordered, lowercase, de-duplicated tag list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
pub struct TagCondition {
    tags: Vec<String>,
}

impl TagCondition {
    /// Normalise raw tags: trim, lowercase, drop empties, keep first occurrences.
    pub fn from_raw<I, S>(raw: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut tags = Vec::new();
        for t in raw {
            let t = t.as_ref().trim().to_lowercase();
            if !t.is_empty() && seen.insert(t.clone()) {
                tags.push(t);
            }
        }
        Self { tags }
    }

    /// Parse a `", "`-joined tag string as it travels on the wire.
    pub fn parse(joined: &str) -> Self {
        Self::from_raw(joined.split(','))
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn joined(&self) -> String {
        self.tags.join(", ")
    }
}

/// A prompt extractor: maps an image patch to raw tags.
pub trait PromptExtractor: Send + Sync {
    fn extract(&self, patch: &ImageGrid) -> Result<Vec<String>, ExtractorError>;

    /// Input size the extractor was trained on; the global image is resized
    /// to it. `None` means any size is accepted as is.
    fn native_size(&self) -> Option<(usize, usize)> {
        None
    }

    /// Whether `extract` may be called from several threads at once.
    fn concurrent_safe(&self) -> bool {
        false
    }
}

pub fn extract_tags(extractor: &dyn PromptExtractor, patch: &ImageGrid) -> Result<TagCondition, ExtractorError> {
    if patch.data().is_empty() {
        return Err(ExtractorError("empty patch".into()));
    }
    extractor.extract(patch).map(TagCondition::from_raw)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptAssignment {
    pub per_window: Vec<TagCondition>,
    pub global: TagCondition,
    /// Windows whose own extraction was empty and now carry the global tags.
    pub fallback_windows: Vec<usize>,
}

/// Tags for the whole image, resized to the extractor's native size first.
pub fn extract_global(extractor: &dyn PromptExtractor, image: &ImageGrid) -> Result<TagCondition, ConditioningError> {
    let resized;
    let input = match extractor.native_size() {
        Some((w, h)) if (w, h) != (image.width(), image.height()) => {
            resized = bicubic_resize(image, w, h).map_err(|e| ConditioningError::Global(ExtractorError(e.to_string())))?;
            &resized
        }
        _ => image,
    };
    extract_tags(extractor, input).map_err(ConditioningError::Global)
}

/// Extract one tag condition per plan window from the matching image patch.
pub fn assign_local_prompts(
    extractor: &dyn PromptExtractor,
    image: &ImageGrid,
    plan: &TilePlan,
    codec: CodecSpec,
) -> Result<PromptAssignment, ConditioningError> {
    let f = codec.spatial_factor;
    let (expected_w, expected_h) = (plan.parent_width * f, plan.parent_height * f);
    if (image.width(), image.height()) != (expected_w, expected_h) {
        return Err(ConditioningError::GeometryMismatch {
            image_w: image.width(),
            image_h: image.height(),
            expected_w,
            expected_h,
            latent_w: plan.parent_width,
            latent_h: plan.parent_height,
            factor: f,
        });
    }

    let global = extract_global(extractor, image)?;

    let one = |w: &crate::tiling::WindowSpec| {
        let patch = crop_image(image, image_patch_for(w, codec));
        extract_tags(extractor, &patch).map_err(|source| ConditioningError::Window { window: w.index, source })
    };
    let local: Vec<TagCondition> = if extractor.concurrent_safe() {
        plan.windows.par_iter().map(one).collect::<Result<_, _>>()?
    } else {
        plan.windows.iter().map(one).collect::<Result<_, _>>()?
    };

    let mut fallback_windows = Vec::new();
    let per_window = local
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            if t.is_empty() {
                fallback_windows.push(i);
                global.clone()
            } else {
                t
            }
        })
        .collect();
    Ok(PromptAssignment {
        per_window,
        global,
        fallback_windows,
    })
}

/// Size of the union of all per-window tag sets; a tag shared by several
/// windows counts once.
pub fn unique_tag_count(assignment: &PromptAssignment) -> usize {
    assignment
        .per_window
        .iter()
        .flat_map(|t| t.tags().iter())
        .collect::<HashSet<_>>()
        .len()
}
