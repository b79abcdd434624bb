//! Differentiable voxel radiance field.

mod grid;
mod quadrature;
mod render;

use thiserror::Error;

pub use grid::{sigmoid, softplus, GridInit, RadianceGrid, Stencil};
pub use quadrature::{composite, Composite, RaySamples};
pub use render::{render, render_gradient, sample_ray, GridGradient, Jitter, NoJitter, RenderTrace, RenderedImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("grid needs at least 2 nodes per axis, got {0:?}")]
    Resolution([usize; 3]),
    #[error("grid bounds are degenerate")]
    DegenerateBounds,
    #[error("grid needs at least one color channel, got {0}")]
    Channels(usize),
    #[error("at least one sample per ray is required")]
    Samples,
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("render trace mismatch: {0}")]
    TraceMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
