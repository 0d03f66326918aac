use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Vec3};

/// Maximum deviation accepted for `RᵀR = I` and `det R = 1`.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// Rigid transform `p ↦ R p + t`, typically LiDAR frame to camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformDoc", into = "TransformDoc")]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidTransform {
    /// Builds a transform, rejecting rotations that are not proper orthonormal matrices.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidParameter("non-finite transform entry".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = (rotation.determinant() - 1.0).abs();
        let deviation = ortho.max(det);
        if deviation > ORTHONORMAL_TOLERANCE {
            return Err(GeometryError::NotOrthonormal { deviation });
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rodrigues' formula: `axis_angle` is the rotation axis scaled by the angle in radians.
    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        let rotation = Rotation3::new(axis_angle).into_inner();
        Self { rotation, translation }
    }

    /// Inverse of [`RigidTransform::from_axis_angle`]; the angle lies in `[0, π]`.
    pub fn axis_angle(&self) -> Vec3 {
        // via a quaternion: the trace formula breaks down when rounding pushes it past 3
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation)).scaled_axis()
    }

    /// Six-parameter vector `(ωx, ωy, ωz, tx, ty, tz)` used by the optimizers.
    pub fn to_params(&self) -> [f64; 6] {
        let w = self.axis_angle();
        let t = self.translation;
        [w.x, w.y, w.z, t.x, t.y, t.z]
    }

    /// # Panics
    /// If `params` has fewer than six entries.
    pub fn from_params(params: &[f64]) -> Self {
        Self::from_axis_angle(Vec3::new(params[0], params[1], params[2]), Vec3::new(params[3], params[4], params[5]))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, point: &Vec3) -> Vec3 {
        self.rotation * point + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Geodesic angle in radians between the rotations of two transforms.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let relative = self.rotation.transpose() * other.rotation;
        let cos = ((relative.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos()
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn se3_transform(transform: &RigidTransform, point: &Vec3) -> Vec3 {
    transform.transform_point(point)
}

pub fn se3_compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn se3_inverse(transform: &RigidTransform) -> RigidTransform {
    transform.inverse()
}

/// JSON form. On input either `rotation` (row-major 3×3) or `axis_angle` may be given.
#[derive(Serialize, Deserialize)]
struct TransformDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    axis_angle: Option<[f64; 3]>,
    translation: [f64; 3],
}

impl TryFrom<TransformDoc> for RigidTransform {
    type Error = GeometryError;

    fn try_from(doc: TransformDoc) -> Result<Self, Self::Error> {
        let t = Vec3::from(doc.translation);
        match (doc.rotation, doc.axis_angle) {
            (Some(rows), _) => {
                let r = Matrix3::from_fn(|i, j| rows[i][j]);
                RigidTransform::new(r, t)
            }
            (None, Some(w)) => {
                let w = Vec3::from(w);
                if !w.iter().chain(t.iter()).all(|v| v.is_finite()) {
                    return Err(GeometryError::InvalidParameter("non-finite transform entry".into()));
                }
                Ok(RigidTransform::from_axis_angle(w, t))
            }
            (None, None) => Err(GeometryError::InvalidParameter("transform needs `rotation` or `axis_angle`".into())),
        }
    }
}

impl From<RigidTransform> for TransformDoc {
    fn from(t: RigidTransform) -> Self {
        let r = t.rotation;
        TransformDoc {
            rotation: Some([
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ]),
            axis_angle: None,
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}
