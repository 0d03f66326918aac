//! Camera projection models and rigid-body transforms.
//!
//! Two projection families are supported: the pinhole model with Brown-Conrady
//! radial/tangential distortion, used for the thermal and polarization cameras, and
//! the OCam/Taylor polynomial model for the panoramic annular lens. Both are wrapped
//! by [`CameraModel`], which adds the image size and the versioned JSON encoding.

mod camera;
pub(crate) mod ocam;
mod pinhole;
mod transform;

pub use camera::{CameraModel, Projection, CAMERA_DOC_VERSION};
pub use ocam::{OcamIntrinsics, MONOTONICITY_SAMPLES};
pub use pinhole::{Distortion, PinholeIntrinsics};
pub use transform::{se3_compose, se3_inverse, se3_transform, RigidTransform, ORTHONORMAL_TOLERANCE};

use serde::{Deserialize, Serialize};

/// A point or direction in meters.
pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth z = {z}")]
    DepthNonPositive { z: f64 },
    #[error("image radius {radius} is outside the polynomial range [{min}, {max}]")]
    OutOfRange { radius: f64, min: f64, max: f64 },
    #[error("OCam polynomial is not strictly increasing on [0, {rho_max}]")]
    NotInvertible { rho_max: f64 },
    #[error("rotation matrix is not orthonormal with det +1 (deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("invalid camera parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported camera document version {0}")]
    UnsupportedVersion(u32),
}

/// Real-valued image coordinates; `u` grows right, `v` grows down.
///
/// Serialized as a two-element array `[u, v]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

impl From<[f64; 2]> for Pixel {
    fn from([u, v]: [f64; 2]) -> Self {
        Self { u, v }
    }
}

impl From<Pixel> for [f64; 2] {
    fn from(p: Pixel) -> Self {
        [p.u, p.v]
    }
}

/// Projects a camera-frame point with whichever model `camera` carries.
pub fn project(point: &Vec3, camera: &CameraModel) -> Result<Pixel, GeometryError> {
    camera.project(point)
}

pub fn pinhole_project(point: &Vec3, intrinsics: &PinholeIntrinsics) -> Result<Pixel, GeometryError> {
    intrinsics.project(point)
}

pub fn ocam_project(point: &Vec3, intrinsics: &OcamIntrinsics) -> Result<Pixel, GeometryError> {
    intrinsics.project(point)
}

pub fn ocam_unproject(pixel: &Pixel, intrinsics: &OcamIntrinsics) -> Result<Vec3, GeometryError> {
    intrinsics.unproject(pixel)
}
