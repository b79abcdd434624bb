//! Balloon-animal geometry: signed-distance primitives placed along the
//! skeleton, their union, and its extraction into one closed triangle mesh.

mod cases;
mod mesh;
mod shape;

use thiserror::Error;

use crate::skeleton::KeypointName;

pub use mesh::{export_obj, extract_mesh, MeshGrid, TriMesh, MIN_RESOLUTION};
pub use shape::{
    build_shape, BalloonShape, BodyPart, BodyPartConfig, PrimitiveKind, PrimitiveRecord, SdfPrimitive, ShapeDocument,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalloonError {
    #[error("degenerate bone {0}–{1}")]
    DegenerateBone(KeypointName, KeypointName),
    #[error("invalid body-part parameter {0}: must be positive and finite")]
    InvalidConfig(String),
    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),
    #[error("cannot mesh an empty shape")]
    EmptyShape,
    #[error("grid resolution {0} is below the minimum of 16")]
    Resolution(usize),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid shape document: {0}")]
    InvalidShape(String),
}
