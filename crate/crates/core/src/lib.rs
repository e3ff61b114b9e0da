//! Pose-only pose adjustment for calibrated multi-camera rigs.
//!
//! Observations are rays of a generalized camera. Scene points are never
//! optimized: each track's point is represented implicitly by two base
//! observations, so the normal equations only involve poses.
//!
//! All numerical code is generic over the scalar type ([`Real`]); the `*64`
//! and `*32` aliases name the common instantiations.

pub mod base_select;
pub mod error;
pub mod gcm;
pub mod geometry;
pub mod pose_only;
pub mod scalar;
pub mod synth;
pub mod optimizer;
pub mod track;
pub mod triangulate;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Pose64 = geometry::Pose<f64>;
pub type Pose32 = geometry::Pose<f32>;
pub type Rotation64 = geometry::Rotation<f64>;
pub type Rotation32 = geometry::Rotation<f32>;
pub type RigConfig64 = gcm::RigConfig<f64>;
pub type RigConfig32 = gcm::RigConfig<f32>;
pub type ObservationRay64 = gcm::ObservationRay<f64>;
pub type ObservationRay32 = gcm::ObservationRay<f32>;
pub type Track64 = track::Track<f64>;
pub type Track32 = track::Track<f32>;
pub type Problem64 = optimizer::Problem<f64>;
pub type Problem32 = optimizer::Problem<f32>;
