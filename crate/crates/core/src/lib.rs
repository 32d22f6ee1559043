//! Tiled latent diffusion for extreme super-resolution.
//!
//! The target latent is covered by overlapping windows. Every window is
//! denoised under its own tag condition, extracted from the matching image
//! patch, and the window outputs are averaged back into the parent latent at
//! every timestep.
//!
//! The crate ships analytic backends ([`backends::ToyDenoiser`],
//! [`conditioning::MockTagger`]) so the whole loop can be verified without
//! model weights, plus a wire protocol ([`protocol`]) for attaching real
//! models running in another process.

pub mod backends;
pub mod cli;
pub mod conditioning;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod protocol;
pub mod tensor;
pub mod tiling;

pub use pipeline::{run, PipelineConfig, RunOutput, RunReport};
pub use tensor::{CodecSpec, ImageGrid, LatentGrid};
