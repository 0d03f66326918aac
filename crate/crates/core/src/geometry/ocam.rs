use serde::{Deserialize, Serialize};

use super::{GeometryError, Pixel, Vec3};

/// Number of evenly spaced samples used to verify that `f(ρ)` is strictly increasing.
pub const MONOTONICITY_SAMPLES: usize = 1024;

/// OCam/Taylor model: image radius `r = f(ρ) = a0 + a1 ρ + … + aN ρᴺ` with
/// `ρ = √(X² + Y²) / Z`, followed by the affine map
/// `u = cx + r (ν + α η)`, `v = cy + r η`.
///
/// `rho_max` bounds the working range `[0, rho_max]` on which the polynomial must be
/// invertible; it is configuration, not a property of the lens formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OcamDoc", into = "OcamDoc")]
pub struct OcamIntrinsics {
    poly: Vec<f64>,
    cx: f64,
    cy: f64,
    alpha: f64,
    rho_max: f64,
    monotone: bool,
}

impl OcamIntrinsics {
    /// Validated constructor. Fails with [`GeometryError::NotInvertible`] when the
    /// polynomial is not strictly increasing on the working range.
    pub fn new(poly: Vec<f64>, cx: f64, cy: f64, alpha: f64, rho_max: f64) -> Result<Self, GeometryError> {
        let intr = Self::new_relaxed(poly, cx, cy, alpha, rho_max)?;
        if !intr.monotone {
            return Err(GeometryError::NotInvertible { rho_max });
        }
        Ok(intr)
    }

    /// Like [`OcamIntrinsics::new`] but records a failed monotonicity check instead of
    /// rejecting it; projection still works, unprojection reports `NotInvertible`.
    pub fn new_relaxed(poly: Vec<f64>, cx: f64, cy: f64, alpha: f64, rho_max: f64) -> Result<Self, GeometryError> {
        if poly.len() < 2 {
            return Err(GeometryError::InvalidParameter("OCam polynomial needs at least two coefficients".into()));
        }
        if !poly.iter().chain([cx, cy, alpha, rho_max].iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidParameter("non-finite OCam parameter".into()));
        }
        if rho_max <= 0.0 {
            return Err(GeometryError::InvalidParameter(format!("rho_max must be positive, got {rho_max}")));
        }
        let monotone = is_strictly_increasing(&poly, rho_max);
        Ok(Self { poly, cx, cy, alpha, rho_max, monotone })
    }

    pub fn poly(&self) -> &[f64] {
        &self.poly
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    /// Image radius for elevation ratio `rho`.
    pub fn radius(&self, rho: f64) -> f64 {
        eval_poly(&self.poly, rho)
    }

    pub fn project(&self, point: &Vec3) -> Result<Pixel, GeometryError> {
        project_raw(&self.poly, self.cx, self.cy, self.alpha, point)
    }

    /// Unit ray (positive z) whose projection is `pixel`.
    pub fn unproject(&self, pixel: &Pixel) -> Result<Vec3, GeometryError> {
        if !self.monotone {
            return Err(GeometryError::NotInvertible { rho_max: self.rho_max });
        }
        let dy = pixel.v - self.cy;
        let dx = (pixel.u - self.cx) - self.alpha * dy;
        let r = dx.hypot(dy);
        if r == 0.0 {
            return Ok(Vec3::new(0.0, 0.0, 1.0));
        }
        let rho = self.solve_rho(r)?;
        let (nu, eta) = (dx / r, dy / r);
        Ok(Vec3::new(nu * rho, eta * rho, 1.0).normalize())
    }

    /// Bracketed bisection for `f(ρ) = r` on `[0, rho_max]`, run to machine precision.
    fn solve_rho(&self, r: f64) -> Result<f64, GeometryError> {
        let (f_lo, f_hi) = (self.radius(0.0), self.radius(self.rho_max));
        if r < f_lo || r > f_hi {
            return Err(GeometryError::OutOfRange { radius: r, min: f_lo, max: f_hi });
        }
        let (mut lo, mut hi) = (0.0_f64, self.rho_max);
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.radius(mid) < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // pick the endpoint with the smaller residual
        if (self.radius(lo) - r).abs() <= (self.radius(hi) - r).abs() {
            Ok(lo)
        } else {
            Ok(hi)
        }
    }

    /// `(a0..aN, cx, cy, α)` as used by the refinement.
    pub fn to_params(&self) -> Vec<f64> {
        let mut p = self.poly.clone();
        p.extend([self.cx, self.cy, self.alpha]);
        p
    }

    /// Inverse of [`OcamIntrinsics::to_params`] for a polynomial of `degree + 1` coefficients.
    pub fn from_params(params: &[f64], rho_max: f64) -> Result<Self, GeometryError> {
        let n = params.len() - 3;
        Self::new_relaxed(params[..n].to_vec(), params[n], params[n + 1], params[n + 2], rho_max)
    }
}

/// Projection on raw parameters, shared with the calibration residuals.
pub(crate) fn project_raw(poly: &[f64], cx: f64, cy: f64, alpha: f64, point: &Vec3) -> Result<Pixel, GeometryError> {
    if point.z <= 0.0 {
        return Err(GeometryError::DepthNonPositive { z: point.z });
    }
    let planar = point.x.hypot(point.y);
    if planar == 0.0 {
        // (ν, η) is undefined on the axis; it maps to the principal point.
        return Ok(Pixel::new(cx, cy));
    }
    let rho = planar / point.z;
    let r = eval_poly(poly, rho);
    let nu = point.x / planar;
    let eta = point.y / planar;
    Ok(Pixel::new(cx + r * (nu + alpha * eta), cy + r * eta))
}

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn is_strictly_increasing(poly: &[f64], rho_max: f64) -> bool {
    let step = rho_max / (MONOTONICITY_SAMPLES - 1) as f64;
    let mut prev = eval_poly(poly, 0.0);
    for k in 1..MONOTONICITY_SAMPLES {
        let cur = eval_poly(poly, k as f64 * step);
        if cur <= prev {
            return false;
        }
        prev = cur;
    }
    true
}

#[derive(Serialize, Deserialize)]
struct OcamDoc {
    /// lowest degree first
    poly: Vec<f64>,
    cx: f64,
    cy: f64,
    #[serde(default)]
    alpha: f64,
    rho_max: f64,
}

impl TryFrom<OcamDoc> for OcamIntrinsics {
    type Error = GeometryError;

    fn try_from(d: OcamDoc) -> Result<Self, Self::Error> {
        OcamIntrinsics::new(d.poly, d.cx, d.cy, d.alpha, d.rho_max)
    }
}

impl From<OcamIntrinsics> for OcamDoc {
    fn from(o: OcamIntrinsics) -> Self {
        OcamDoc { poly: o.poly, cx: o.cx, cy: o.cy, alpha: o.alpha, rho_max: o.rho_max }
    }
}
