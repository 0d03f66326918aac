use std::path::{Path, PathBuf};

use clap::Subcommand;
use panosense::fusion::{
    mipf_forward, save_tensor, vjc_forward, MipfInputs, MipfWeights, VjcWeights, WeightBundle, DEFAULT_HEADS,
    DEFAULT_HIDDEN, DEFAULT_PROMPT_WIDTH,
};
use panosense::FeatureMap;
use serde_json::json;

use crate::{CliError, Ctx, Outcome};

#[derive(Debug, Subcommand)]
pub enum FusionCommand {
    /// Vertical jitter compensation: regress a row offset and resample the map.
    Vjc(VjcArgs),
    /// Prompt fusion of LiDAR BEV features with three image modalities.
    Mipf(MipfArgs),
}

#[derive(Debug, clap::Args)]
pub struct VjcArgs {
    /// `C × H × W` feature tensor (raw float32 with a `{"dims"}` sidecar).
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Weight bundle; random weights from `--seed` when omitted.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Hidden width of generated weights.
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    pub hidden: usize,
    /// Also write the weights that were used.
    #[arg(long, value_name = "FILE")]
    pub save_weights: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct MipfArgs {
    #[arg(long, value_name = "FILE")]
    pub lidar: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub pal: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub thermal: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub polar: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Embedding width of generated weights; must be divisible by `--heads`.
    #[arg(long, default_value_t = 32)]
    pub embed: usize,
    #[arg(long, default_value_t = DEFAULT_HEADS)]
    pub heads: usize,
    #[arg(long, default_value_t = DEFAULT_PROMPT_WIDTH)]
    pub prompt_width: usize,
    #[arg(long, value_name = "FILE")]
    pub save_weights: Option<PathBuf>,
}

pub fn run(ctx: &Ctx, cmd: &FusionCommand) -> Result<Outcome, CliError> {
    match cmd {
        FusionCommand::Vjc(a) => vjc(ctx, a),
        FusionCommand::Mipf(a) => mipf(ctx, a),
    }
}

fn save_bundle(path: Option<&Path>, bundle: WeightBundle) -> Result<(), CliError> {
    if let Some(p) = path {
        bundle.save(p)?;
    }
    Ok(())
}

fn vjc(ctx: &Ctx, args: &VjcArgs) -> Result<Outcome, CliError> {
    let map = FeatureMap::load(&args.input)?;
    let weights = match &args.weights {
        Some(p) => VjcWeights::from_bundle(&WeightBundle::load(p)?)?,
        None => VjcWeights::random(map.channels(), args.hidden, ctx.seed),
    };
    save_bundle(args.save_weights.as_deref(), weights.to_bundle())?;
    let (out, offset) = vjc_forward(&map, &weights)?;
    out.save(&ctx.out_path_with_sidecar("vjc.f32")?)?;
    let summary = json!({
        "command": "fusion vjc",
        "dims": [out.channels(), out.height(), out.width()],
        "offset_rows": offset,
        "offset_normalized": 2.0 * offset / map.height() as f64,
    });
    ctx.write_json("vjc.json", &summary)?;
    Ok(Outcome::ok(summary))
}

fn mipf(ctx: &Ctx, args: &MipfArgs) -> Result<Outcome, CliError> {
    let lidar = FeatureMap::load(&args.lidar)?;
    let images = [FeatureMap::load(&args.pal)?, FeatureMap::load(&args.thermal)?, FeatureMap::load(&args.polar)?];
    let weights = match &args.weights {
        Some(p) => MipfWeights::from_bundle(&WeightBundle::load(p)?)?,
        None => MipfWeights::random(
            lidar.channels(),
            images.each_ref().map(FeatureMap::channels),
            args.embed,
            args.prompt_width,
            args.heads,
            ctx.seed,
        ),
    };
    save_bundle(args.save_weights.as_deref(), weights.to_bundle())?;
    let out = mipf_forward(&MipfInputs { lidar: &lidar, images: images.each_ref() }, &weights)?;

    out.fused.save(&ctx.out_path_with_sidecar("fused.f32")?)?;
    out.gate.save(&ctx.out_path_with_sidecar("gate.f32")?)?;
    let a = &out.attention;
    save_tensor(&ctx.out_path_with_sidecar("attention.f32")?, a.shape(), a.iter().copied())?;
    save_tensor(&ctx.out_path_with_sidecar("prompts.f32")?, out.prompts.shape(), out.prompts.iter().copied())?;

    let (h, w, heads, m) = a.dim();
    let mut worst_row = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            for k in 0..heads {
                let s: f64 = (0..m).map(|j| a[[y, x, k, j]]).sum();
                worst_row = worst_row.max((s - 1.0).abs());
            }
        }
    }
    // mean attention each modality receives, over cells and heads
    let share: Vec<f64> =
        (0..m).map(|j| a.index_axis(ndarray::Axis(3), j).iter().sum::<f64>() / (h * w * heads) as f64).collect();
    let gate_mean = out.gate.data().iter().sum::<f64>() / out.gate.data().len() as f64;
    let summary = json!({
        "command": "fusion mipf",
        "dims": [out.fused.channels(), h, w],
        "heads": heads,
        "attention_row_sum_max_deviation": worst_row,
        "attention_share": { "pal": share[0], "thermal": share[1], "polar": share[2] },
        "gate_mean": gate_mean,
    });
    ctx.write_json("mipf.json", &summary)?;
    Ok(Outcome::ok(summary))
}
