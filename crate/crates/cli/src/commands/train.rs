use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use ludvision::metrics::{accuracy_metrics, confusion_matrix, ConfusionMatrix};
use ludvision::model::{band_statistics, build_model, poly_lr, Model};
use ludvision::raster::CLASS_LUDWIGIA;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{self, Scene};

/// Decorrelates the crop sampler from the weight initialization, which uses
/// the run seed directly.
const SAMPLER_SEED_XOR: u64 = 0x5ce2_e35a_11b7_30d1;

#[derive(Args)]
pub struct TrainArgs {
    /// Run-configuration file (key = value lines)
    #[arg(long)]
    config: PathBuf,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::from_file(&args.config)?;
    let model = train_model(&cfg)?;
    model
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

/// Ludwigia-class IoU of the model over `scenes`, pooled into one confusion
/// matrix; `None` when there are no scenes or the class never appears.
pub fn validation_iou(
    model: &Model,
    scenes: &[Scene],
    tile: usize,
    overlap: usize,
) -> Result<Option<f64>> {
    if scenes.is_empty() {
        return Ok(None);
    }
    let preds = scenes
        .par_iter()
        .map(|scene| {
            model
                .predict_mask(&scene.image, tile, overlap)
                .with_context(|| format!("segmenting {}", scene.stem))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pooled = ConfusionMatrix::new(2);
    for (scene, pred) in scenes.iter().zip(&preds) {
        pooled.merge(&confusion_matrix(pred, &scene.mask)?)?;
    }
    Ok(accuracy_metrics(&pooled)[CLASS_LUDWIGIA as usize].class_iou)
}

/// Full training run: scan and split the data, fit normalization on the
/// training split, then SGD over random crops with per-epoch logging.
pub fn train_model(cfg: &RunConfig) -> Result<Model> {
    let pairs = dataset::scan_pairs(Path::new(&cfg.data_dir))?;
    if pairs.is_empty() {
        bail!("no .lms scenes under {}", cfg.data_dir);
    }
    let (train_pairs, val_pairs) = dataset::split_pairs(&pairs, cfg.val_fraction);
    let train_scenes: Vec<Scene> = train_pairs
        .iter()
        .map(|p| dataset::load_scene(p))
        .collect::<Result<_>>()?;
    let val_scenes: Vec<Scene> = val_pairs
        .iter()
        .map(|p| dataset::load_scene(p))
        .collect::<Result<_>>()?;

    let images: Vec<_> = train_scenes.iter().map(|s| &s.image).collect();
    let stats = band_statistics(&images)?;
    let mut model = build_model(cfg.model_config())?;
    model.set_normalization(stats)?;

    let min_side = model.config().min_input_side();
    if cfg.crop_size < min_side {
        bail!("crop_size {} under the model minimum {}", cfg.crop_size, min_side);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SAMPLER_SEED_XOR);
    let steps_per_epoch = train_scenes.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_scenes.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for picks in order.chunks(cfg.batch_size) {
            let (batch, masks) = dataset::sample_batch(
                &model,
                &train_scenes,
                picks,
                cfg.crop_size,
                cfg.flip_horizontal,
                cfg.flip_vertical,
                &mut rng,
            )?;
            let lr = poly_lr(cfg.base_lr, step, total_steps, cfg.lr_power);
            loss_sum += model.train_step(&batch, &masks, lr, cfg.momentum)?;
            step += 1;
        }
        let mean_loss = loss_sum / steps_per_epoch as f64;
        let iou = validation_iou(&model, &val_scenes, cfg.tile_size, cfg.tile_overlap)?;
        match iou {
            Some(v) => println!("epoch {epoch}/{} loss {mean_loss:.6} val_iou {v:.4}", cfg.epochs),
            None => println!("epoch {epoch}/{} loss {mean_loss:.6} val_iou n/a", cfg.epochs),
        }
    }
    Ok(model)
}
