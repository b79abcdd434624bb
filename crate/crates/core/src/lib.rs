//! Pose-controlled balloon-animal toolkit.
//!
//! The crate covers the whole path from an 18-keypoint tetrapod skeleton to
//! an optimized radiance grid:
//!
//! * [`skeleton`] and [`geometry`] define the pose, cameras and projection.
//! * [`balloon`] turns a skeleton into a signed-distance "balloon animal" and
//!   a closed triangle mesh.
//! * [`control`] renders depth maps and pose control images.
//! * [`dataset`] filters and augments 2D keypoint annotations.
//! * [`field`] is the differentiable voxel radiance grid.
//! * [`sds`] holds the noise schedule, guidance interface, annealing
//!   schedules and the score-distillation gradient.
//! * [`pipeline`] drives the two optimization stages; [`editor`] serves the
//!   interactive skeleton editor over HTTP.

pub mod balloon;
pub mod control;
pub mod dataset;
pub mod editor;
pub mod field;
pub mod geometry;
pub mod image;
pub mod optim;
pub mod pipeline;
pub mod sds;
pub mod skeleton;

pub use balloon::{build_shape, extract_mesh, BalloonShape, BodyPartConfig, TriMesh};
pub use geometry::{Camera, CameraSamplingConfig, Ray, SphericalSample, Vec3};
pub use skeleton::{default_skeleton, KeypointName, Skeleton, ViewDescription};
