use serde::{Deserialize, Serialize};

use super::{Distortion, GeometryError, OcamIntrinsics, PinholeIntrinsics, Pixel, Vec3};

pub const CAMERA_DOC_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Pinhole(PinholeIntrinsics),
    Ocam(OcamIntrinsics),
}

/// A projection model together with its image size.
///
/// JSON form (`version` defaults to 1, the OCam polynomial is lowest degree first):
///
/// ```json
/// {"version": 1, "model": "pinhole", "width": 640, "height": 512,
///  "fx": 500, "fy": 500, "cx": 320, "cy": 256, "k1": 0, "k2": 0, "k3": 0, "p1": 0, "p2": 0}
/// {"version": 1, "model": "ocam", "width": 2048, "height": 2048,
///  "poly": [0, 600, 0, -30], "cx": 1024, "cy": 1024, "alpha": 0, "rho_max": 2.5}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraDoc", into = "CameraDoc")]
pub struct CameraModel {
    width: u32,
    height: u32,
    projection: Projection,
}

impl CameraModel {
    pub fn new(width: u32, height: u32, projection: Projection) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidParameter(format!("image size must be positive, got {width}x{height}")));
        }
        Ok(Self { width, height, projection })
    }

    pub fn pinhole(width: u32, height: u32, intrinsics: PinholeIntrinsics) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        Self::new(width, height, Projection::Pinhole(intrinsics))
    }

    pub fn ocam(width: u32, height: u32, intrinsics: OcamIntrinsics) -> Result<Self, GeometryError> {
        Self::new(width, height, Projection::Ocam(intrinsics))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn model_name(&self) -> &'static str {
        match self.projection {
            Projection::Pinhole(_) => "pinhole",
            Projection::Ocam(_) => "ocam",
        }
    }

    pub fn project(&self, point: &Vec3) -> Result<Pixel, GeometryError> {
        match &self.projection {
            Projection::Pinhole(k) => k.project(point),
            Projection::Ocam(o) => o.project(point),
        }
    }

    /// Unit viewing ray for a pixel.
    pub fn unproject(&self, pixel: &Pixel) -> Result<Vec3, GeometryError> {
        match &self.projection {
            Projection::Pinhole(k) => Ok(k.unproject(pixel)),
            Projection::Ocam(o) => o.unproject(pixel),
        }
    }

    /// Whether `pixel` lies in `[0, width) × [0, height)`.
    pub fn contains(&self, pixel: &Pixel) -> bool {
        pixel.u >= 0.0 && pixel.v >= 0.0 && pixel.u < self.width as f64 && pixel.v < self.height as f64
    }
}

#[derive(Serialize, Deserialize)]
struct CameraDoc {
    #[serde(default = "default_version")]
    version: u32,
    width: u32,
    height: u32,
    #[serde(flatten)]
    params: ParamsDoc,
}

fn default_version() -> u32 {
    CAMERA_DOC_VERSION
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
enum ParamsDoc {
    Pinhole {
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        #[serde(default)]
        k1: f64,
        #[serde(default)]
        k2: f64,
        #[serde(default)]
        k3: f64,
        #[serde(default)]
        p1: f64,
        #[serde(default)]
        p2: f64,
    },
    Ocam {
        poly: Vec<f64>,
        cx: f64,
        cy: f64,
        #[serde(default)]
        alpha: f64,
        rho_max: f64,
    },
}

impl TryFrom<CameraDoc> for CameraModel {
    type Error = GeometryError;

    fn try_from(doc: CameraDoc) -> Result<Self, Self::Error> {
        if doc.version != CAMERA_DOC_VERSION {
            return Err(GeometryError::UnsupportedVersion(doc.version));
        }
        let projection = match doc.params {
            ParamsDoc::Pinhole { fx, fy, cx, cy, k1, k2, k3, p1, p2 } => {
                Projection::Pinhole(PinholeIntrinsics::new(fx, fy, cx, cy, Distortion { k1, k2, k3, p1, p2 })?)
            }
            ParamsDoc::Ocam { poly, cx, cy, alpha, rho_max } => {
                Projection::Ocam(OcamIntrinsics::new(poly, cx, cy, alpha, rho_max)?)
            }
        };
        CameraModel::new(doc.width, doc.height, projection)
    }
}

impl From<CameraModel> for CameraDoc {
    fn from(cam: CameraModel) -> Self {
        let params = match cam.projection {
            Projection::Pinhole(k) => ParamsDoc::Pinhole {
                fx: k.fx,
                fy: k.fy,
                cx: k.cx,
                cy: k.cy,
                k1: k.distortion.k1,
                k2: k.distortion.k2,
                k3: k.distortion.k3,
                p1: k.distortion.p1,
                p2: k.distortion.p2,
            },
            Projection::Ocam(o) => ParamsDoc::Ocam {
                poly: o.poly().to_vec(),
                cx: o.cx(),
                cy: o.cy(),
                alpha: o.alpha(),
                rho_max: o.rho_max(),
            },
        };
        CameraDoc { version: CAMERA_DOC_VERSION, width: cam.width, height: cam.height, params }
    }
}
