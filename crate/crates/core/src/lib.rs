//! Kernels for joint LiDAR 3D object detection and semi-supervised stereo
//! depth estimation.
//!
//! Every kernel is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64`, which is what gradient
//! certification and the CLI use.

// `!(x > 0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod box_geometry;
pub mod certify;
pub mod depth_losses;
pub mod detection_codec;
pub mod detection_losses;
pub mod error;
pub mod evaluation;
pub mod kitti_io;
pub mod mat;
pub mod numerics;
pub mod scalar;
pub mod synthetic;
pub mod voxel_grid;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ImageGrid = numerics::ImageGrid<f64>;
pub type DepthMap = depth_losses::DepthMap<f64>;
pub type PointCloud = kitti_io::PointCloud<f64>;
pub type LidarPoint = kitti_io::LidarPoint<f64>;
pub type ObjectLabel = kitti_io::ObjectLabel<f64>;
pub type Calibration = kitti_io::Calibration<f64>;
pub type RoiConfig = voxel_grid::RoiConfig<f64>;
pub type VoxelGrid = voxel_grid::VoxelGrid<f64>;
pub type OrientedBox3D = box_geometry::OrientedBox3D<f64>;
pub type ProjectedPoint = box_geometry::ProjectedPoint<f64>;
pub type TargetTensor = detection_codec::TargetTensor<f64>;
pub type Detection = detection_codec::Detection<f64>;
pub type DetLossWeights = detection_losses::DetLossWeights<f64>;
pub type DetLossReport = detection_losses::DetLossReport<f64>;
pub type EdgeParams = depth_losses::EdgeParams<f64>;
pub type DepthLossWeights = depth_losses::DepthLossWeights<f64>;
pub type DepthLossReport = depth_losses::DepthLossReport<f64>;
pub type StereoPair = depth_losses::StereoPair<f64>;
pub type DepthMetrics = evaluation::DepthMetrics<f64>;
pub type PrCurve = evaluation::PrCurve<f64>;

pub type ImageGridF32 = numerics::ImageGrid<f32>;
pub type OrientedBox3DF32 = box_geometry::OrientedBox3D<f32>;
