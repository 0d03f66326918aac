//! Reference toolkit for panoramic multimodal robot perception.
//!
//! The crate is organized by subsystem:
//!
//! - [`geometry`]: pinhole and OCam (Taylor polynomial) camera models, rigid transforms.
//! - [`optim`]: dense Levenberg-Marquardt with numeric Jacobians.
//! - [`calib`]: checkerboard intrinsic calibration and corner-based LiDAR-camera extrinsics.
//! - [`polarization`]: Stokes parameters and DoLP/AoLP maps from four-angle captures.
//! - [`occupancy`]: semantic occupancy grids, voxelization, confusion matrices and mIoU.
//! - [`fusion`]: forward passes of the vertical jitter compensation and prompt fusion
//!   operators, the occupancy head reshape, and the segmentation losses.
//! - [`signal`]: IMU vertical-acceleration jitter analysis.
//! - [`dataio`]: sequence manifests, timestamp alignment and keyframe sampling.
//! - [`raster`]: the raw float32 + JSON sidecar array format shared by the CLI.
//!
//! All numeric kernels run single-threaded in a fixed summation order, so identical
//! inputs always produce bit-identical outputs.

pub mod calib;
pub mod dataio;
pub mod fusion;
pub mod geometry;
pub mod occupancy;
pub mod optim;
pub mod polarization;
pub mod raster;
pub mod signal;
pub mod synthetic;

pub use calib::{CalibError, CalibrationResult, CornerObservationSet};
pub use dataio::{Modality, SequenceManifest, Timestamp};
pub use fusion::FeatureMap;
pub use geometry::{CameraModel, GeometryError, Pixel, RigidTransform, Vec3};
pub use occupancy::{GridSpec, OccupancyGrid, PointCloud};
pub use optim::{LmConfig, LmReport};
