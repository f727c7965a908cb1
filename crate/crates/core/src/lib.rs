//! Geometry, anchors, losses and evaluation for monocular 3D detection with
//! a ground-plane prior.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchors;
pub mod boxes;
pub mod camera;
pub mod detection;
pub mod error;
pub mod evaluation;
pub mod feature_map;
pub mod gac;
pub mod kitti;
pub mod losses;
pub mod moments;
pub mod postopt;
pub mod synthetic;

pub use anchors::{AnchorGrid, AnchorStats};
pub use boxes::{Box2D, Box3D, Dimensions, ObservationAngle};
pub use camera::{CameraIntrinsics, GroundModel};
pub use detection::Detection;
pub use error::{Error, Result};
pub use feature_map::FeatureMap;
pub use kitti::{CalibrationFile, LabelRecord};
