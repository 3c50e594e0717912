use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use ludvision::align::{align_and_stack, RansacConfig, DEFAULT_REF_INDEX};
use ludvision::raster::{read_raster, write_raster, Rect};

/// The five single-band files of a capture, in canonical stack order.
const CAPTURE_FILES: [&str; 5] = ["b.lms", "g.lms", "r.lms", "re.lms", "nir.lms"];

#[derive(Args)]
pub struct AlignArgs {
    /// Capture directory holding b.lms, g.lms, r.lms, re.lms and nir.lms
    #[arg(long)]
    capture: PathBuf,
    /// Output path for the registered stack
    #[arg(long)]
    out: PathBuf,
    /// Width of the centered trim window (shrunk to fit small frames)
    #[arg(long, default_value_t = 1400)]
    trim_width: usize,
    /// Height of the centered trim window
    #[arg(long, default_value_t = 1100)]
    trim_height: usize,
    /// Seed for the robust homography fits
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn run(args: &AlignArgs) -> Result<()> {
    let mut bands = Vec::with_capacity(CAPTURE_FILES.len());
    let mut metas = Vec::with_capacity(CAPTURE_FILES.len());
    for file in CAPTURE_FILES {
        let path = args.capture.join(file);
        let image =
            read_raster(&path).with_context(|| format!("reading {}", path.display()))?;
        if image.band_count() != 1 {
            bail!(
                "{}: expected a single band, found {}",
                path.display(),
                image.band_count()
            );
        }
        metas.push(image.bands()[0].clone());
        bands.push(image.extract_band(0)?);
    }
    let frame = (bands[0].width, bands[0].height);
    let trim = Rect::centered(frame.0, frame.1, args.trim_width, args.trim_height);
    let cfg = RansacConfig {
        seed: args.seed,
        ..RansacConfig::default()
    };
    let stack = align_and_stack(&bands, &metas, DEFAULT_REF_INDEX, &cfg, trim)
        .context("registering capture")?;
    write_raster(&stack, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
