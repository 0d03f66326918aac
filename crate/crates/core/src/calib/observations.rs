use serde::{Deserialize, Serialize};

use super::CalibError;
use crate::geometry::{Pixel, Vec3};

/// Plane-fit RMS (meters) above which a frame's LiDAR corners draw a warning.
pub const COPLANARITY_WARN_RMS: f64 = 0.05;

/// One checkerboard view: board-plane points in meters and their detected pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardObservation {
    pub id: String,
    pub board_points: Vec<[f64; 2]>,
    pub image_points: Vec<Pixel>,
}

impl BoardObservation {
    pub fn validate(&self) -> Result<(), CalibError> {
        if self.board_points.len() != self.image_points.len() {
            return Err(CalibError::InvalidObservation(format!(
                "view {}: {} board points but {} image points",
                self.id,
                self.board_points.len(),
                self.image_points.len()
            )));
        }
        if self.board_points.len() < 4 {
            return Err(CalibError::InsufficientCorrespondences { got: self.board_points.len(), required: 4 });
        }
        let finite =
            self.board_points.iter().flatten().all(|v| v.is_finite()) && self.image_points.iter().all(Pixel::is_finite);
        if !finite {
            return Err(CalibError::InvalidObservation(format!("view {}: non-finite coordinate", self.id)));
        }
        if collinear(&self.board_points) {
            return Err(CalibError::DegenerateConfiguration(format!("view {}: board points are collinear", self.id)));
        }
        Ok(())
    }
}

fn collinear(points: &[[f64; 2]]) -> bool {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0] / n, y + p[1] / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // smaller eigenvalue of the 2×2 scatter matrix relative to the larger
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (hi, lo) = (tr / 2.0 + disc, tr / 2.0 - disc);
    hi == 0.0 || lo <= 1e-12 * hi
}

/// On-disk form of a set of checkerboard views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardObservationFile {
    pub width: u32,
    pub height: u32,
    pub frames: Vec<BoardObservation>,
}

/// The four whiteboard corners of one frame, ordered top-left, top-right,
/// bottom-right, bottom-left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerFrame {
    pub id: String,
    pub image_corners: Vec<Pixel>,
    pub lidar_corners: Vec<[f64; 3]>,
}

impl CornerFrame {
    pub fn lidar_points(&self) -> Vec<Vec3> {
        self.lidar_corners.iter().map(|&p| Vec3::from(p)).collect()
    }

    /// Checks corner counts and winding. Returns warnings for soft violations.
    pub fn validate(&self) -> Result<Vec<String>, CalibError> {
        let n = self.image_corners.len().min(self.lidar_corners.len());
        if self.image_corners.len() != 4 || self.lidar_corners.len() != 4 {
            return Err(CalibError::InsufficientCorrespondences { got: n, required: 4 });
        }
        let finite = self.image_corners.iter().all(Pixel::is_finite)
            && self.lidar_corners.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(CalibError::InvalidObservation(format!("frame {}: non-finite corner", self.id)));
        }
        if !is_clockwise_quad(&self.image_corners) {
            return Err(CalibError::CornerOrder { frame: self.id.clone() });
        }
        let mut warnings = Vec::new();
        let rms = plane_fit_rms(&self.lidar_points());
        if rms > COPLANARITY_WARN_RMS {
            warnings.push(format!("frame {}: LiDAR corners deviate from a plane by {rms:.3} m RMS", self.id));
        }
        Ok(warnings)
    }
}

/// Whether four pixels form a convex quad ordered top-left, top-right, bottom-right,
/// bottom-left. In image coordinates (v down) that order turns the same way at every
/// vertex, with a positive cross product.
pub fn is_clockwise_quad(c: &[Pixel]) -> bool {
    c.len() == 4
        && (0..4).all(|i| {
            let (a, b, d) = (c[i], c[(i + 1) % 4], c[(i + 2) % 4]);
            let e1 = (b.u - a.u, b.v - a.v);
            let e2 = (d.u - b.u, d.v - b.v);
            e1.0 * e2.1 - e1.1 * e2.0 > 0.0
        })
}

/// RMS distance of the points to their least-squares plane.
pub(crate) fn plane_fit_rms(points: &[Vec3]) -> f64 {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut scatter = nalgebra::Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let smallest = eig.eigenvalues.min().max(0.0);
    (smallest / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CornerObservationSet {
    pub frames: Vec<CornerFrame>,
}

impl CornerObservationSet {
    pub fn correspondence_count(&self) -> usize {
        self.frames.iter().map(|f| f.image_corners.len().min(f.lidar_corners.len())).sum()
    }
}
