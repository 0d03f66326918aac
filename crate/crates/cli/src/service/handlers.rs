use std::io::Cursor;
use std::path::Path;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use image::{GrayImage, ImageFormat};
use panosense::calib::{extrinsic_residuals, is_clockwise_quad, CornerFrame, CornerObservationSet};
use panosense::dataio::Modality;
use panosense::occupancy::read_cloud;
use panosense::raster::read_intensity;
use panosense::Pixel;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{jobs, ApiError, SharedState};
use crate::commands::calib::{overlay as project_overlay, Overlay};
use crate::dataset::{valid_id, Annotation, FrameInfo};

const DEFAULT_MAX_POINTS: usize = 50_000;

fn frame<'a>(state: &'a SharedState, id: &str) -> Result<&'a FrameInfo, ApiError> {
    state.dataset.frame(id).ok_or_else(|| ApiError::not_found(format!("unknown frame {id}")))
}

pub async fn frames(State(state): State<SharedState>) -> Result<Json<Value>, ApiError> {
    let ds = &state.dataset;
    let mut frames = Vec::with_capacity(ds.frames.len());
    for f in &ds.frames {
        let annotation = ds.read_annotation(&f.id)?.map(|a| json!({ "camera": a.camera, "revision": a.revision }));
        frames.push(json!({
            "id": f.id,
            "timestamp": f.timestamp,
            "modalities": f.images.keys().collect::<Vec<_>>(),
            "annotation": annotation,
        }));
    }
    Ok(Json(json!({
        "sequence_id": ds.manifest.sequence_id,
        "cameras": ds.cameras.keys().collect::<Vec<_>>(),
        "frames": frames,
    })))
}

/// Raw intensities scaled linearly onto 0–255.
fn to_gray8(values: &ndarray::Array2<f64>) -> GrayImage {
    let (h, w) = values.dim();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([((values[[y as usize, x as usize]] - lo) * scale).round() as u8])
    })
}

pub async fn image(
    State(state): State<SharedState>,
    UrlPath((frame_id, modality)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    let f = frame(&state, &frame_id)?;
    let m: Modality = modality.parse().map_err(ApiError::not_found)?;
    let rel = f.images.get(&m).ok_or_else(|| ApiError::not_found(format!("frame {frame_id} has no {m} image")))?;
    let path = state.dataset.layout.resolve(rel);
    let bytes = if Path::new(rel).extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        tokio::fs::read(&path).await.map_err(|e| ApiError::internal(format!("{rel}: {e}")))?
    } else {
        let values = read_intensity(&path).map_err(|e| ApiError::internal(e.to_string()))?;
        let mut buf = Cursor::new(Vec::new());
        to_gray8(&values).write_to(&mut buf, ImageFormat::Png).map_err(|e| ApiError::internal(e.to_string()))?;
        buf.into_inner()
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
pub struct CloudQuery {
    pub max_points: Option<usize>,
    pub stride: Option<usize>,
}

pub async fn cloud(
    State(state): State<SharedState>,
    UrlPath(frame_id): UrlPath<String>,
    Query(q): Query<CloudQuery>,
) -> Result<Json<Value>, ApiError> {
    let f = frame(&state, &frame_id)?;
    let stride = q.stride.unwrap_or(1);
    if stride == 0 {
        return Err(ApiError::bad_request("stride must be at least 1"));
    }
    let max_points = q.max_points.unwrap_or(DEFAULT_MAX_POINTS);
    let cloud = read_cloud(&state.dataset.layout.resolve(&f.lidar)).map_err(|e| ApiError::internal(e.to_string()))?;
    let points: Vec<[f64; 4]> = (0..cloud.len())
        .step_by(stride)
        .take(max_points)
        .map(|i| {
            let p = cloud.positions[i];
            [p.x, p.y, p.z, cloud.intensity.as_ref().map_or(0.0, |v| v[i])]
        })
        .collect();
    Ok(Json(json!({
        "frame": frame_id,
        "total": cloud.len(),
        "stride": stride,
        "returned": points.len(),
        "fields": ["x", "y", "z", "intensity"],
        "points": points,
    })))
}

pub async fn get_annotation(
    State(state): State<SharedState>,
    UrlPath(frame_id): UrlPath<String>,
) -> Result<Json<Annotation>, ApiError> {
    frame(&state, &frame_id)?;
    state
        .dataset
        .read_annotation(&frame_id)?
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("frame {frame_id} is not annotated")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationUpdate {
    pub camera: String,
    pub corners: Vec<Pixel>,
    /// Revision the client last saw; a mismatch is saved anyway but reported.
    #[serde(default)]
    pub revision: Option<u64>,
}

fn validate_corners(state: &SharedState, update: &AnnotationUpdate) -> Result<(), ApiError> {
    let camera = state
        .dataset
        .cameras
        .get(&update.camera)
        .ok_or_else(|| ApiError::invalid(format!("unknown camera {}", update.camera)))?;
    if update.corners.len() != 4 {
        return Err(ApiError::invalid(format!("expected 4 corners, got {}", update.corners.len())));
    }
    if let Some(i) = update.corners.iter().position(|p| !p.is_finite() || !camera.contains(p)) {
        let p = update.corners[i];
        return Err(ApiError::invalid(format!(
            "corner {i} at ({}, {}) is outside the {}x{} image",
            p.u,
            p.v,
            camera.width(),
            camera.height()
        )));
    }
    if !is_clockwise_quad(&update.corners) {
        return Err(ApiError::invalid("corners must be ordered top-left, top-right, bottom-right, bottom-left"));
    }
    Ok(())
}

pub async fn put_annotation(
    State(state): State<SharedState>,
    UrlPath(frame_id): UrlPath<String>,
    Json(update): Json<AnnotationUpdate>,
) -> Result<Json<Value>, ApiError> {
    frame(&state, &frame_id)?;
    if !valid_id(&frame_id) {
        return Err(ApiError::bad_request(format!("invalid frame id {frame_id}")));
    }
    validate_corners(&state, &update)?;

    let lock = state.write_lock(&format!("annotations/{frame_id}"));
    let _guard = lock.lock().await;
    let previous = state.dataset.read_annotation(&frame_id)?;
    let current = previous.as_ref().map_or(0, |a| a.revision);
    let warning = match update.revision {
        Some(seen) if seen != current => {
            Some(format!("revision mismatch: client saw {seen}, server had {current}; saved anyway"))
        }
        _ => None,
    };
    let annotation =
        Annotation { frame: frame_id.clone(), camera: update.camera, corners: update.corners, revision: current + 1 };
    let path = state.dataset.layout.annotation(&frame_id);
    std::fs::create_dir_all(path.parent().expect("annotations dir")).map_err(|e| ApiError::internal(e.to_string()))?;
    panosense::raster::write_json(&path, &annotation).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(json!({ "annotation": annotation, "warning": warning })))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveRequest {
    pub camera: String,
    /// Defaults to every frame annotated for `camera`.
    #[serde(default)]
    pub frames: Option<Vec<String>>,
}

pub async fn solve(
    State(state): State<SharedState>,
    Json(req): Json<SolveRequest>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let ds = &state.dataset;
    if !ds.cameras.contains_key(&req.camera) {
        return Err(ApiError::invalid(format!("unknown camera {}", req.camera)));
    }
    let frames = match req.frames {
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|id| ds.frame(id).is_none()) {
                return Err(ApiError::invalid(format!("unknown frame {bad}")));
            }
            ids
        }
        None => ds.annotated_frames(&req.camera)?,
    };
    if frames.is_empty() {
        return Err(ApiError::invalid(format!("no frames are annotated for {}", req.camera)));
    }
    let obs = ds.corner_set(&frames, &req.camera).map_err(|e| ApiError::invalid(e.to_string()))?;
    let id = jobs::submit(&state, req.camera, obs);
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id }))))
}

pub async fn job(State(state): State<SharedState>, UrlPath(id): UrlPath<u64>) -> Result<Json<jobs::Job>, ApiError> {
    state.job(id).map(Json).ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))
}

#[derive(Debug, Deserialize)]
pub struct OverlayQuery {
    pub camera: Option<String>,
    /// Name of a stored transform under `extrinsics/`; defaults to the camera id.
    pub extrinsics: Option<String>,
    pub max_points: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CornerResidual {
    pub corner: usize,
    pub observed: Pixel,
    /// `None` when the corner is behind the camera under the transform.
    pub predicted: Option<Pixel>,
    pub residual: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlayResponse {
    pub frame: String,
    pub camera: String,
    pub extrinsics: String,
    #[serde(flatten)]
    pub overlay: Overlay,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corners: Option<Vec<CornerResidual>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rms: Option<f64>,
}

pub async fn overlay(
    State(state): State<SharedState>,
    UrlPath(frame_id): UrlPath<String>,
    Query(q): Query<OverlayQuery>,
) -> Result<Json<OverlayResponse>, ApiError> {
    let ds = &state.dataset;
    let f = frame(&state, &frame_id)?;
    let camera_id = match q.camera {
        Some(c) => c,
        None if ds.cameras.contains_key("thermal") => "thermal".into(),
        None => ds.cameras.keys().next().cloned().ok_or_else(|| ApiError::not_found("dataset has no cameras"))?,
    };
    let camera =
        ds.cameras.get(&camera_id).ok_or_else(|| ApiError::not_found(format!("unknown camera {camera_id}")))?;
    let name = q.extrinsics.unwrap_or_else(|| camera_id.clone());
    if !valid_id(&name) {
        return Err(ApiError::bad_request(format!("invalid extrinsics name {name}")));
    }
    let transform =
        ds.read_extrinsics(&name)?.ok_or_else(|| ApiError::not_found(format!("no extrinsics named {name}")))?;

    let cloud = read_cloud(&ds.layout.resolve(&f.lidar)).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut overlay = project_overlay(&cloud.positions, &transform, camera);
    overlay.points.truncate(q.max_points.unwrap_or(DEFAULT_MAX_POINTS));

    let mut corners = None;
    let mut rms = None;
    if let Some(ann) = ds.read_annotation(&frame_id)?.filter(|a| a.camera == camera_id) {
        let frame = CornerFrame {
            id: frame_id.clone(),
            image_corners: ann.corners.clone(),
            lidar_corners: ds.read_lidar_corners(&frame_id)?,
        };
        let res = extrinsic_residuals(&CornerObservationSet { frames: vec![frame] }, camera, &transform);
        let fr = &res[0];
        corners = Some(
            ann.corners
                .iter()
                .zip(&fr.residuals)
                .enumerate()
                .map(|(corner, (obs, r))| {
                    let masked = fr.masked.contains(&corner);
                    CornerResidual {
                        corner,
                        observed: *obs,
                        predicted: (!masked).then(|| Pixel::new(obs.u - r[0], obs.v - r[1])),
                        residual: (!masked).then_some(*r),
                    }
                })
                .collect(),
        );
        rms = Some(fr.rms);
    }
    Ok(Json(OverlayResponse { frame: frame_id, camera: camera_id, extrinsics: name, overlay, corners, rms }))
}
