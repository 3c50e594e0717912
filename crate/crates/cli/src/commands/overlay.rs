use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use ludvision::raster::{read_mask, read_raster, MultispectralImage, CLASS_LUDWIGIA};

#[derive(Args)]
pub struct OverlayArgs {
    /// Stacked LMS image
    #[arg(long)]
    stack: PathBuf,
    /// Mask to overlay (PGM, typically a prediction)
    #[arg(long)]
    mask: PathBuf,
    /// Output image path (binary PPM)
    #[arg(long)]
    out: PathBuf,
}

/// Band indices composing the visible image, as (R, G, B). Named bands win;
/// otherwise the canonical B,G,R,... stack order is assumed.
fn composite_indices(image: &MultispectralImage) -> Result<(usize, usize, usize)> {
    if let (Some(r), Some(g), Some(b)) = (
        image.band_index("R"),
        image.band_index("G"),
        image.band_index("B"),
    ) {
        return Ok((r, g, b));
    }
    if image.band_count() >= 3 {
        return Ok((2, 1, 0));
    }
    bail!("stack has {} bands; an RGB composite needs 3", image.band_count());
}

fn byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn run(args: &OverlayArgs) -> Result<()> {
    let image =
        read_raster(&args.stack).with_context(|| format!("reading {}", args.stack.display()))?;
    let mask =
        read_mask(&args.mask).with_context(|| format!("reading {}", args.mask.display()))?;
    if (mask.width, mask.height) != (image.width(), image.height()) {
        bail!(
            "mask is {}x{} but the stack is {}x{}",
            mask.width,
            mask.height,
            image.width(),
            image.height()
        );
    }
    let (ri, gi, bi) = composite_indices(&image)?;
    let (w, h) = (image.width(), image.height());
    let mut pixels = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            let rgb = [
                image.value(ri, x, y) as f64,
                image.value(gi, x, y) as f64,
                image.value(bi, x, y) as f64,
            ];
            // Detections carry a pure red tint at 50% opacity.
            let tint = [1.0, 0.0, 0.0];
            if mask.at(x, y) == CLASS_LUDWIGIA {
                for (v, t) in rgb.iter().zip(tint) {
                    pixels.push(byte(0.5 * v + 0.5 * t));
                }
            } else {
                for v in rgb {
                    pixels.push(byte(v));
                }
            }
        }
    }
    let file = std::fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut out = std::io::BufWriter::new(file);
    write!(out, "P6\n{w} {h}\n255\n")?;
    out.write_all(&pixels)?;
    out.flush()?;
    Ok(())
}
