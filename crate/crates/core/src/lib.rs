//! Learning where objects sit around an articulated human body from many
//! posed, calibrated 2D object masks.
//!
//! Evidence from every view is pulled back into a canonical, person-centric
//! voxel space through linear blend skinning, aggregated into an occupancy
//! field, and pushed forward into any target pose for inference. The crate
//! also carries the projective average precision protocol used to score such
//! fields against 2D masks, and a synthetic scene generator that produces
//! datasets with known ground truth.

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod body;
pub mod camera;
pub mod config;
pub mod dataset;
pub mod error;
pub mod filtering;
pub mod grid;
pub mod mesh;
pub mod pap;
pub mod skinning;
pub mod synth;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
