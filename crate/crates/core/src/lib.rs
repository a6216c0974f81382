//! Multiview pedestrian detection on a ground-plane occupancy grid.
//!
//! Per-camera feature maps are warped onto a shared ground grid through the
//! z = 0 homography of each calibrated camera, stacked with a coordinate
//! map, and turned into an occupancy map by a small stack of dilated
//! convolutions. Everything numeric is generic over [`Real`]; the aliases
//! below pin the types the binary uses.

pub mod calib;
pub mod cli;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod net;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod targets;
pub mod tensor;
pub mod warp;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use scalar::Real;

pub type CameraCalibration = calib::CameraCalibration<f64>;
pub type ProjectionMatrix = calib::ProjectionMatrix<f64>;
pub type Homography = calib::Homography<f64>;
pub type FeatureTensor = tensor::Tensor<f32>;
pub type ConvLayer = net::ConvLayer<f32>;
pub type GroundHead = net::GroundHead<f32>;
pub type Model = net::Mvdet<f32>;

pub use eval::MetricsReport;
pub use grid::GroundGrid;
pub use pipeline::{DecodeConfig, TrainConfig};
pub use synth::SceneConfig;
pub use targets::{Detection, DetectionSet, OccupancyMap};
pub use warp::ProjectionMode;
