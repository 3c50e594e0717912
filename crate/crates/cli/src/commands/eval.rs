use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use ludvision::metrics::{evaluation_report, report_csv};
use ludvision::model::Model;
use ludvision::raster::{read_mask, LabelMask};
use rayon::prelude::*;

use crate::dataset;

#[derive(Args)]
pub struct EvalArgs {
    /// Scene directory: ground-truth <stem>.pgm masks, plus <stem>.lms
    /// stacks when predicting with --model
    #[arg(long)]
    data: PathBuf,
    /// Trained checkpoint; predictions are computed from the stacks
    #[arg(long, required_unless_present = "pred", conflicts_with = "pred")]
    model: Option<PathBuf>,
    /// Directory of precomputed prediction masks, matched by stem
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// Tile side for windowed inference
    #[arg(long, default_value_t = 512)]
    tile: usize,
    /// Overlap between neighboring tiles, per side
    #[arg(long, default_value_t = 32)]
    overlap: usize,
}

/// `(prediction, ground truth, group)` for every scene, in stem order.
fn predicted_samples(args: &EvalArgs, model_path: &Path) -> Result<Vec<(LabelMask, LabelMask, String)>> {
    let pairs = dataset::scan_pairs(&args.data)?;
    if pairs.is_empty() {
        bail!("no scenes under {}", args.data.display());
    }
    let model = Model::load(model_path)
        .with_context(|| format!("loading {}", model_path.display()))?;
    pairs
        .par_iter()
        .map(|pair| {
            let scene = dataset::load_scene(pair)?;
            let pred = model
                .predict_mask(&scene.image, args.tile, args.overlap)
                .with_context(|| format!("segmenting {}", pair.stem))?;
            Ok((pred, scene.mask, scene.group))
        })
        .collect()
}

fn precomputed_samples(args: &EvalArgs, pred_dir: &Path) -> Result<Vec<(LabelMask, LabelMask, String)>> {
    let gt_masks = dataset::scan_masks(&args.data)?;
    if gt_masks.is_empty() {
        bail!("no ground-truth masks under {}", args.data.display());
    }
    gt_masks
        .iter()
        .map(|(stem, gt_path)| {
            let pred_path = pred_dir.join(format!("{stem}.pgm"));
            if !pred_path.is_file() {
                bail!("{stem}: no prediction {}", pred_path.display());
            }
            let pred = read_mask(&pred_path)
                .with_context(|| format!("reading {}", pred_path.display()))?;
            let gt = read_mask(gt_path)
                .with_context(|| format!("reading {}", gt_path.display()))?;
            Ok((pred, gt, dataset::group_label(stem).to_string()))
        })
        .collect()
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let samples = match (&args.model, &args.pred) {
        (Some(model_path), None) => predicted_samples(args, model_path)?,
        (None, Some(pred_dir)) => precomputed_samples(args, pred_dir)?,
        _ => unreachable!("clap enforces exactly one of --model/--pred"),
    };
    let borrowed: Vec<(&LabelMask, &LabelMask, &str)> = samples
        .iter()
        .map(|(pred, gt, group)| (pred, gt, group.as_str()))
        .collect();
    let report = evaluation_report(&borrowed)?;
    std::fs::write(&args.out, report_csv(&report))
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
