use std::path::PathBuf;

use panosense::occupancy::{
    confusion, default_class_set, miou, read_cloud, read_labels, voxelize as bucket, GridSpec, DEFAULT_VOXEL_CAP,
    IGNORE_LABEL,
};
use serde::Serialize;
use serde_json::json;

use crate::{read_json_file, CliError, Ctx, Outcome};

#[derive(Debug, clap::Args)]
pub struct VoxelizeArgs {
    #[arg(long, value_name = "FILE")]
    pub cloud: PathBuf,
    /// Grid spec JSON `{"min", "max", "voxel_size"}`; defaults to 64×64×16 at 0.4 m.
    #[arg(long, value_name = "FILE")]
    pub grid: Option<PathBuf>,
    /// Maximum points kept per voxel.
    #[arg(long)]
    pub cap: Option<usize>,
}

#[derive(Serialize)]
struct VoxelRecord<'a> {
    index: [usize; 3],
    count: usize,
    mean: &'a [f64],
}

pub fn voxelize(ctx: &Ctx, args: &VoxelizeArgs) -> Result<Outcome, CliError> {
    let cloud = read_cloud(&args.cloud)?;
    let spec: GridSpec = match &args.grid {
        Some(path) => read_json_file(path)?,
        None => GridSpec::default(),
    };
    let cap = args.cap.or(ctx.file.voxelize.cap).unwrap_or(DEFAULT_VOXEL_CAP);
    let voxels = bucket(&cloud, &spec, cap)?;
    let inside = cloud.positions.iter().filter(|p| spec.world_to_voxel(p).is_some()).count();
    let kept: usize = voxels.values().map(|v| v.count).sum();
    let records: Vec<VoxelRecord> =
        voxels.iter().map(|(&index, v)| VoxelRecord { index, count: v.count, mean: &v.mean }).collect();
    ctx.write_json("voxels.json", &json!({ "spec": spec, "cap": cap, "voxels": records }))?;
    Ok(Outcome::ok(json!({
        "command": "voxelize",
        "dims": spec.dims(),
        "cap": cap,
        "points": cloud.len(),
        "points_outside": cloud.len() - inside,
        "points_dropped_by_cap": inside - kept,
        "occupied_voxels": voxels.len(),
    })))
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub gt: PathBuf,
    /// Classes averaged into the mIoU; defaults to 1..=12.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<u8>>,
    /// Ground-truth label excluded from scoring.
    #[arg(long, default_value_t = IGNORE_LABEL)]
    pub ignore: u8,
}

pub fn eval_miou(ctx: &Ctx, args: &EvalArgs) -> Result<Outcome, CliError> {
    let pred = read_labels(&args.pred)?;
    let gt = read_labels(&args.gt)?;
    let cm = confusion(&pred, &gt, args.ignore)?;
    let classes = args.classes.clone().unwrap_or_else(default_class_set);
    let report = miou(&cm, &classes)?;
    ctx.write_json("miou.json", &json!({ "report": report, "confusion": cm }))?;
    Ok(Outcome::ok(json!({
        "command": "eval-miou",
        "miou": report.miou,
        "scored_voxels": cm.total,
        "per_class": report.per_class,
    })))
}
