//! Physics-based lens occlusion and weather effects, with inverse
//! estimation of their parameters from a target image set.
//!
//! The crate renders four occlusion models (raindrops, dirt, fog, alpha
//! composites) over RGB scenes and recovers their physical parameters by
//! minimizing a realism critic: gradient descent with common-random-numbers
//! finite differences for differentiable parameters, CMA-ES for
//! non-differentiable ones, alternating between the two blocks. A
//! saliency-derived guidance map gates where occluders may be injected, and
//! the `bench` module ships a synthetic ground-truth recovery protocol.

pub mod blur;
pub mod config;
pub mod critic;
pub mod error;
pub mod estimate;
pub mod guidance;
pub mod models;
pub mod raster;
pub mod rng;

pub mod bench;

pub use error::{Error, Result};
pub use raster::{load_depth, load_image, save_image, BinaryMask, DepthMap, Image, Plane};
pub use rng::RngStream;
