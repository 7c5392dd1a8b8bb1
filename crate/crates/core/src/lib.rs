//! Occlusion-aware cuboid fitting for 2.5D depth maps.
//!
//! A sequential RANSAC loop draws minimal sets of nine points, fits a
//! cuboid to each with a small Adam solver, and keeps the hypothesis that
//! explains the most points without hiding any observed surface behind
//! itself. [`pipeline::sequential_fit`] is the entry point; [`metrics`]
//! scores the result against ground truth.

pub mod dual;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod inlier;
pub mod io;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod sampling;
pub mod scene;
pub mod solver;
pub mod superquadric;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
pub use geometry::{CameraModel, Cuboid, Face, Vec3};
pub use pipeline::{sequential_fit, CuboidSet, FitConfig};
