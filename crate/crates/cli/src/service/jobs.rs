use std::sync::atomic::Ordering;

use panosense::calib::{calibrate_extrinsics, CornerObservationSet, FrameResiduals};
use panosense::optim::Termination;
use panosense::RigidTransform;
use serde::{Deserialize, Serialize};

use super::{AppState, SharedState};
use crate::commands::calib::initial_guess;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub rms: f64,
    pub transform: RigidTransform,
    /// Frame ids from the largest to the smallest residual RMS.
    pub worst_frames: Vec<String>,
    pub frames: Vec<FrameResiduals>,
    pub iterations: usize,
    pub termination: Termination,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub status: JobStatus,
    pub camera: String,
    pub frames: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<SolveSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AppState {
    pub fn job(&self, id: u64) -> Option<Job> {
        self.jobs.read().expect("jobs poisoned").get(&id).cloned()
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.jobs.write().expect("jobs poisoned").get_mut(&id) {
            f(job);
        }
    }
}

/// Registers a job and starts it on the blocking pool.
pub fn submit(state: &SharedState, camera: String, obs: CornerObservationSet) -> u64 {
    let id = state.next_job.fetch_add(1, Ordering::Relaxed);
    let frames = obs.frames.iter().map(|f| f.id.clone()).collect();
    let job = Job { id, status: JobStatus::Queued, camera: camera.clone(), frames, result: None, error: None };
    state.jobs.write().expect("jobs poisoned").insert(id, job);
    let state = state.clone();
    tokio::task::spawn_blocking(move || {
        state.update(id, |j| j.status = JobStatus::Running);
        let outcome = solve(&state, &camera, &obs);
        if let Err(e) = &outcome {
            log::warn!("solve job {id} failed: {e}");
        }
        state.update(id, |j| match outcome {
            Ok(summary) => {
                j.status = JobStatus::Done;
                j.result = Some(summary);
            }
            Err(e) => {
                j.status = JobStatus::Failed;
                j.error = Some(e);
            }
        });
    });
    id
}

fn solve(state: &AppState, camera_id: &str, obs: &CornerObservationSet) -> Result<SolveSummary, String> {
    let camera = state.dataset.cameras.get(camera_id).ok_or_else(|| format!("unknown camera {camera_id}"))?;
    let initial = initial_guess(obs, camera).map_err(|e| e.to_string())?;
    let result = calibrate_extrinsics(obs, camera, &initial).map_err(|e| e.to_string())?;
    let transform = result.extrinsics.expect("extrinsic calibration yields a transform");

    let path = state.dataset.layout.extrinsics(camera_id);
    let lock = state.write_lock(&format!("extrinsics/{camera_id}"));
    let _guard = lock.blocking_lock();
    std::fs::create_dir_all(path.parent().expect("extrinsics dir")).map_err(|e| e.to_string())?;
    panosense::raster::write_json(&path, &transform).map_err(|e| e.to_string())?;

    Ok(SolveSummary {
        rms: result.rms,
        worst_frames: result.worst_frames().into_iter().map(String::from).collect(),
        transform,
        iterations: result.report.iterations,
        termination: result.report.termination,
        warnings: result.warnings,
        frames: result.frames,
    })
}
