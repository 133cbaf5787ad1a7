//! Simulator for computational radar coincidence imaging with reconfigurable
//! intelligent surfaces (RIS).
//!
//! Groups of RIS panels redirect a single transmitter's wave into a region of
//! interest (ROI) with randomized steering angles and phase offsets. The
//! interfering beams form "focused speckle" illumination that changes from
//! mask to mask; a second group of panels collects the echoes for a single
//! receiver. The crate builds the resulting linear sensing model, simulates
//! noisy measurements and reconstructs reflectivity maps, alongside raster
//! scanning and random-pattern baselines.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below name the double-precision instantiations used by the CLI.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod geometry;
pub mod io;
pub mod masks;
pub mod recon;
pub mod scalar;
pub mod scene;
pub mod sensing;

pub use error::{Error, Result};
pub use geometry::Vec3;
pub use scalar::Real;

pub type Scene64 = scene::Scene<f64>;
pub type Scene32 = scene::Scene<f32>;
pub type Mask64 = masks::Mask<f64>;
pub type Mask32 = masks::Mask<f32>;
pub type FieldMap64 = fields::FieldMap<f64>;
pub type FieldMap32 = fields::FieldMap<f32>;
pub type SensingMatrix64 = sensing::SensingMatrix<f64>;
pub type SensingMatrix32 = sensing::SensingMatrix<f32>;
pub type Measurement64 = sensing::Measurement<f64>;
pub type ReconResult64 = recon::ReconResult<f64>;
pub type TargetMap64 = scene::TargetMap<f64>;
pub type Point3 = Vec3<f64>;
