use std::num::NonZeroUsize;
use std::path::PathBuf;

use panosense::dataio::{
    align_streams, keyframe_sample, load_manifest, Modality, DEFAULT_KEYFRAME_STRIDE, DEFAULT_TOLERANCE_S,
};
use serde_json::json;

use crate::{CliError, Ctx, Outcome};

#[derive(Debug, clap::Args)]
pub struct AlignArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Stream whose timestamps define the frames.
    #[arg(long)]
    pub anchor: Option<Modality>,
    /// Largest accepted offset to the anchor, in seconds.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Keep every n-th aligned frame as a keyframe.
    #[arg(long)]
    pub stride: Option<usize>,
}

pub fn align(ctx: &Ctx, args: &AlignArgs) -> Result<Outcome, CliError> {
    let cfg = &ctx.file.align;
    let anchor = args.anchor.or(cfg.anchor).unwrap_or(Modality::Lidar);
    let tolerance = args.tolerance.or(cfg.tolerance).unwrap_or(DEFAULT_TOLERANCE_S);
    let stride = args.stride.or(cfg.stride).unwrap_or(DEFAULT_KEYFRAME_STRIDE);
    let stride = NonZeroUsize::new(stride).ok_or_else(|| CliError::input("stride must be at least 1"))?;

    let manifest = load_manifest(&args.manifest)?;
    let frames = align_streams(&manifest.stream_list(), anchor, tolerance)?;
    let keyframes = keyframe_sample(&frames, stride);
    let anchor_frames = manifest.streams.get(&anchor).map_or(0, |s| s.len());

    ctx.write_json("aligned.json", &frames)?;
    ctx.write_json("keyframes.json", &keyframes)?;
    Ok(Outcome::ok(json!({
        "command": "align",
        "sequence_id": manifest.sequence_id,
        "anchor": anchor,
        "tolerance": tolerance,
        "stride": stride.get(),
        "anchor_frames": anchor_frames,
        "aligned": frames.len(),
        "dropped": anchor_frames - frames.len(),
        "keyframes": keyframes.len(),
    })))
}
