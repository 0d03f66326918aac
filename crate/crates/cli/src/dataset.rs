//! On-disk layout of an annotation dataset, shared by `serve` and `synth`.
//!
//! ```text
//! <root>/manifest.json              sequence manifest; the lidar stream defines the frames
//! <root>/cameras/<id>.json          camera models; ids match manifest modality names
//! <root>/lidar_corners/<frame>.json four whiteboard corners in the LiDAR frame
//! <root>/annotations/<frame>.json   clicked image corners (the only state the service mutates)
//! <root>/extrinsics/<camera>.json   latest solved LiDAR-to-camera transform
//! ```
//!
//! A frame id is the file stem of its lidar entry, e.g. `lidar/frame_003.bin` is `frame_003`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use panosense::calib::{CornerFrame, CornerObservationSet};
use panosense::dataio::{load_manifest, Modality, SequenceManifest, Timestamp, DEFAULT_TOLERANCE_S};
use panosense::{CameraModel, Pixel, RigidTransform};
use serde::{Deserialize, Serialize};

use crate::{read_json_file, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Corner clicks for one frame in one camera, TL, TR, BR, BL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: String,
    pub camera: String,
    pub corners: Vec<Pixel>,
    /// Incremented on every save.
    pub revision: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameInfo {
    pub id: String,
    pub timestamp: Timestamp,
    pub lidar: String,
    /// Nearest image of each camera stream within the alignment tolerance.
    pub images: BTreeMap<Modality, String>,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn cameras_dir(&self) -> PathBuf {
        self.root.join("cameras")
    }

    pub fn camera(&self, id: &str) -> PathBuf {
        self.cameras_dir().join(format!("{id}.json"))
    }

    pub fn lidar_corners(&self, frame: &str) -> PathBuf {
        self.root.join("lidar_corners").join(format!("{frame}.json"))
    }

    pub fn annotation(&self, frame: &str) -> PathBuf {
        self.root.join("annotations").join(format!("{frame}.json"))
    }

    pub fn extrinsics(&self, name: &str) -> PathBuf {
        self.root.join("extrinsics").join(format!("{name}.json"))
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }
}

/// Identifiers that name files must not escape their directory.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'))
        && !id.starts_with('.')
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub layout: Layout,
    pub manifest: SequenceManifest,
    pub frames: Vec<FrameInfo>,
    pub cameras: BTreeMap<String, CameraModel>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        let layout = Layout::new(root);
        let manifest = load_manifest(&layout.manifest())?;
        let lidar =
            manifest.streams.get(&Modality::Lidar).ok_or_else(|| CliError::input("manifest has no lidar stream"))?;
        let tol_ns = (DEFAULT_TOLERANCE_S * 1e9) as i64;
        let frames = lidar
            .entries()
            .iter()
            .map(|e| {
                let id = Path::new(&e.path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let images = manifest
                    .streams
                    .iter()
                    .filter(|(m, _)| !matches!(m, Modality::Lidar | Modality::Imu))
                    .filter_map(|(m, s)| {
                        let near = s.nearest(e.timestamp)?;
                        ((near.timestamp.nanos() - e.timestamp.nanos()).abs() <= tol_ns)
                            .then(|| (*m, near.path.clone()))
                    })
                    .collect();
                FrameInfo { id, timestamp: e.timestamp, lidar: e.path.clone(), images }
            })
            .collect();

        let mut cameras = BTreeMap::new();
        if let Ok(dir) = std::fs::read_dir(layout.cameras_dir()) {
            for entry in dir.flatten() {
                let path = entry.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let id = path.file_stem().expect("has stem").to_string_lossy().into_owned();
                    cameras.insert(id, read_json_file(&path)?);
                }
            }
        }
        Ok(Self { layout, manifest, frames, cameras })
    }

    pub fn frame(&self, id: &str) -> Option<&FrameInfo> {
        self.frames.iter().find(|f| f.id == id)
    }

    pub fn read_annotation(&self, frame: &str) -> Result<Option<Annotation>, CliError> {
        let path = self.layout.annotation(frame);
        if !path.exists() {
            return Ok(None);
        }
        read_json_file(&path).map(Some)
    }

    pub fn read_lidar_corners(&self, frame: &str) -> Result<Vec<[f64; 3]>, CliError> {
        read_json_file(&self.layout.lidar_corners(frame))
    }

    pub fn read_extrinsics(&self, name: &str) -> Result<Option<RigidTransform>, CliError> {
        let path = self.layout.extrinsics(name);
        if !path.exists() {
            return Ok(None);
        }
        read_json_file(&path).map(Some)
    }

    /// Annotated frames for `camera` paired with their LiDAR corners, in the given order.
    pub fn corner_set(&self, frames: &[String], camera: &str) -> Result<CornerObservationSet, CliError> {
        let mut out = Vec::with_capacity(frames.len());
        for id in frames {
            let ann = self
                .read_annotation(id)?
                .filter(|a| a.camera == camera)
                .ok_or_else(|| CliError::input(format!("frame {id} has no {camera} annotation")))?;
            out.push(CornerFrame {
                id: id.clone(),
                image_corners: ann.corners,
                lidar_corners: self.read_lidar_corners(id)?,
            });
        }
        Ok(CornerObservationSet { frames: out })
    }

    /// Frames holding an annotation for `camera`, in manifest order.
    pub fn annotated_frames(&self, camera: &str) -> Result<Vec<String>, CliError> {
        let mut ids = Vec::new();
        for f in &self.frames {
            if self.read_annotation(&f.id)?.is_some_and(|a| a.camera == camera) {
                ids.push(f.id.clone());
            }
        }
        Ok(ids)
    }
}
