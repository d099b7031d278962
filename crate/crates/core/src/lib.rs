//! Relative ground-plane velocity of road vehicles from bounding-box tracks.
//!
//! The pipeline is split the same way the crate is:
//!
//! - [`geometry`]: pinhole projection onto the road plane and the
//!   back-projection velocity baseline.
//! - [`track`]: box sequences, temporal Gaussian smoothing, featurization and
//!   tracker-noise simulation.
//! - [`priors`]: location, size-vs-depth and velocity statistics fitted from a
//!   small labeled sample.
//! - [`synth`]: labeled synthetic tracks drawn from a [`priors::PriorModel`].
//! - [`regressor`]: a small CReLU MLP with analytic backprop, Adam training and
//!   checkpoints.
//! - [`eval`]: the distance-bucketed velocity error metric.
//! - [`dataset`]: JSONL record streams shared by all of the above.
//! - [`benchmark`]: the synthetic end-to-end comparison against the baseline.

pub mod benchmark;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod priors;
pub mod regressor;
pub mod synth;
pub mod track;

pub use error::{Error, Result};
pub use geometry::{Camera, GroundPoint, ImagePoint, Velocity2D};
pub use track::{BBox, Track};
