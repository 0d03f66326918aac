use serde::{Deserialize, Serialize};

use super::{GeometryError, Pixel, Vec3};

/// Brown-Conrady coefficients: radial `k1..k3`, tangential `p1, p2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Distortion {
    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.k3 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    /// Maps undistorted normalized coordinates to distorted ones.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2 + self.k3 * r2 * r2 * r2;
        let xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        (xd, yd)
    }

    /// Fixed-point inversion of [`Distortion::apply`]. Converges for the mild
    /// distortion typical of thermal/polarization lenses.
    pub fn remove(&self, xd: f64, yd: f64) -> (f64, f64) {
        if self.is_zero() {
            return (xd, yd);
        }
        let (mut x, mut y) = (xd, yd);
        for _ in 0..100 {
            let (fx, fy) = self.apply(x, y);
            let (ex, ey) = (fx - xd, fy - yd);
            x -= ex;
            y -= ey;
            if ex.abs().max(ey.abs()) < 1e-15 {
                break;
            }
        }
        (x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(flatten)]
    pub distortion: Distortion,
}

impl PinholeIntrinsics {
    pub const PARAM_COUNT: usize = 9;

    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, distortion: Distortion) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, distortion };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let d = &self.distortion;
        let all = [self.fx, self.fy, self.cx, self.cy, d.k1, d.k2, d.k3, d.p1, d.p2];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidParameter("non-finite pinhole parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidParameter(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn project(&self, point: &Vec3) -> Result<Pixel, GeometryError> {
        if point.z <= 0.0 {
            return Err(GeometryError::DepthNonPositive { z: point.z });
        }
        let x = point.x / point.z;
        let y = point.y / point.z;
        let (xd, yd) = self.distortion.apply(x, y);
        Ok(Pixel::new(self.fx * xd + self.cx, self.fy * yd + self.cy))
    }

    /// Unit ray through `pixel` (distortion removed iteratively).
    pub fn unproject(&self, pixel: &Pixel) -> Vec3 {
        let xd = (pixel.u - self.cx) / self.fx;
        let yd = (pixel.v - self.cy) / self.fy;
        let (x, y) = self.distortion.remove(xd, yd);
        Vec3::new(x, y, 1.0).normalize()
    }

    /// `(fx, fy, cx, cy, k1, k2, k3, p1, p2)`.
    pub fn to_params(&self) -> [f64; 9] {
        let d = &self.distortion;
        [self.fx, self.fy, self.cx, self.cy, d.k1, d.k2, d.k3, d.p1, d.p2]
    }

    /// Unvalidated inverse of [`PinholeIntrinsics::to_params`].
    pub fn from_params(p: &[f64]) -> Self {
        Self {
            fx: p[0],
            fy: p[1],
            cx: p[2],
            cy: p[3],
            distortion: Distortion { k1: p[4], k2: p[5], k3: p[6], p1: p[7], p2: p[8] },
        }
    }
}
