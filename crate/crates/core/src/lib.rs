//! Fits a linear 3D shape model to a single image using sparse geometry:
//! labelled landmarks and image edges. Provides the shape model container,
//! scaled orthographic camera, pose and shape estimation, two edge-based
//! fitting strategies (explicit nearest-edge correspondence and a smooth
//! distance-transform cost), a synthetic data generator, and an evaluation
//! harness around them.

pub mod camera;
pub mod contour;
pub mod edgemap;
pub mod error;
pub mod eval;
pub mod fit_hard;
pub mod fit_soft;
pub mod kdtree;
pub mod landmark_fit;
pub mod model;
pub mod solvers;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil;

pub use camera::{AxisAnglePose, Pose};
pub use error::{Error, Result};
pub use model::{Mesh, ShapeCoefficients, ShapeModel, Topology};
