use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use ludvision::model::Model;
use ludvision::raster::{read_raster, write_mask};

#[derive(Args)]
pub struct PredictArgs {
    /// Trained checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Stacked LMS image to segment
    #[arg(long)]
    stack: PathBuf,
    /// Output mask path (PGM)
    #[arg(long)]
    out: PathBuf,
    /// Tile side for windowed inference
    #[arg(long, default_value_t = 512)]
    tile: usize,
    /// Overlap between neighboring tiles, per side
    #[arg(long, default_value_t = 32)]
    overlap: usize,
}

pub fn run(args: &PredictArgs) -> Result<()> {
    let model =
        Model::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let image =
        read_raster(&args.stack).with_context(|| format!("reading {}", args.stack.display()))?;
    let mask = model
        .predict_mask(&image, args.tile, args.overlap)
        .context("segmenting stack")?;
    write_mask(&mask, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
