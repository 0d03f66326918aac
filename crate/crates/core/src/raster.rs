//! Raw little-endian float32 arrays with a JSON sidecar, and atomic file writes.
//!
//! A raster `foo.f32` is accompanied by `foo.f32.json` holding at least
//! `{"width": W, "height": H}`; samples are stored row-major.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad sidecar: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error("{path}: expected {expected} bytes of float32 data, found {got}")]
    SizeMismatch { path: PathBuf, expected: usize, got: usize },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io { path: path.to_path_buf(), source }
}

/// `<path>.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes through a temporary file in the same directory and renames it into place,
/// so readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RasterError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RasterError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RasterError::Sidecar { path: path.to_path_buf(), message: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RasterError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_f32_le(path: &Path) -> Result<Vec<f32>, RasterError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() % 4 != 0 {
        return Err(RasterError::SizeMismatch {
            path: path.to_path_buf(),
            expected: bytes.len() / 4 * 4,
            got: bytes.len(),
        });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn f32_le_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterShape {
    pub width: usize,
    pub height: usize,
}

/// Reads a raw float32 raster; the result is `height × width`.
pub fn read_raster(path: &Path) -> Result<Array2<f64>, RasterError> {
    let shape: RasterShape = read_json(&sidecar_path(path))?;
    let data = read_f32_le(path)?;
    let expected = shape.width * shape.height;
    if data.len() != expected {
        return Err(RasterError::SizeMismatch {
            path: path.to_path_buf(),
            expected: 4 * expected,
            got: 4 * data.len(),
        });
    }
    Ok(Array2::from_shape_vec((shape.height, shape.width), data.into_iter().map(f64::from).collect())
        .expect("length checked"))
}

pub fn write_raster(path: &Path, values: &Array2<f64>) -> Result<(), RasterError> {
    let (height, width) = values.dim();
    write_atomic(path, &f32_le_bytes(values.iter().map(|&v| v as f32)))?;
    write_json(&sidecar_path(path), &RasterShape { width, height })
}

/// Loads a single-channel image as raw counts. PGM/PNM and PNG go through the
/// image decoder (8- or 16-bit); anything else is treated as a raw float32 raster.
pub fn read_intensity(path: &Path) -> Result<Array2<f64>, RasterError> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm" | "pnm" | "png") => {
            let img = image::open(path)
                .map_err(|e| RasterError::Image { path: path.to_path_buf(), message: e.to_string() })?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let values: Vec<f64> = match img {
                image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f64::from).collect(),
                other => other.into_luma16().into_raw().into_iter().map(f64::from).collect(),
            };
            Ok(Array2::from_shape_vec((h, w), values).expect("image buffer matches its dimensions"))
        }
        _ => read_raster(path),
    }
}
