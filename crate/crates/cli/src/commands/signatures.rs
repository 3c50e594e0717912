use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use ludvision::raster::{read_mask, read_raster, CLASS_BACKGROUND, CLASS_LUDWIGIA};
use ludvision::spectra::{signature_csv, signature_table};

#[derive(Args)]
pub struct SignaturesArgs {
    /// Stacked LMS image
    #[arg(long)]
    stack: PathBuf,
    /// Ground-truth mask (PGM, codes 0/1/255)
    #[arg(long)]
    mask: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &SignaturesArgs) -> Result<()> {
    let image =
        read_raster(&args.stack).with_context(|| format!("reading {}", args.stack.display()))?;
    let mask =
        read_mask(&args.mask).with_context(|| format!("reading {}", args.mask.display()))?;
    let table = signature_table(&image, &mask, &[CLASS_BACKGROUND, CLASS_LUDWIGIA])?;
    std::fs::write(&args.out, signature_csv(&table))
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
