//! Band-to-band registration: NCC correspondence search, robust homography
//! estimation, projective warping, and stacking of a five-band capture into
//! one multispectral image.
//!
//! The co-mounted sensors are rigidly coupled, so displacements between bands
//! are small; a projective model per band pair absorbs them. Each band is
//! warped into the coordinates of a reference band (green by default, being
//! mid-spectrum) and the stack is trimmed to a centered window so residual
//! border fill never reaches downstream consumers.

mod homography;
mod ncc;
mod warp;

pub use homography::{estimate_homography, Homography};
pub use ncc::find_correspondences;
pub use warp::warp_band;

use thiserror::Error;

use crate::raster::{Band, BandMeta, MultispectralImage, RasterError, Rect};

/// Grid spacing of correspondence candidates, in pixels.
pub const DEFAULT_GRID_STEP: usize = 64;
/// Side of the (odd) matching window, in pixels.
pub const DEFAULT_WINDOW: usize = 21;
/// Maximum displacement explored around each grid point, in pixels.
pub const DEFAULT_SEARCH_RADIUS: usize = 16;
/// Default reference band: green, index 1 in canonical (B,G,R,RE,NIR) order.
pub const DEFAULT_REF_INDEX: usize = 1;

#[derive(Debug, Error)]
pub enum AlignError {
    /// Geometry does not support a reliable fit (textureless windows, too few
    /// correspondences, collinear samples, consensus below threshold).
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    /// Caller-supplied arguments violate a precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// A matched point pair: where content at `tgt_xy` in the target band sits in
/// the reference band (`ref_xy`), with its correlation score.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub ref_xy: (f64, f64),
    pub tgt_xy: (f64, f64),
    /// Normalized cross-correlation at the (integer) peak, in [−1, 1].
    pub score: f64,
}

/// Controls for the robust homography fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub max_iters: usize,
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            inlier_threshold_px: 1.5,
            min_inliers: 12,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if self.max_iters < 1 {
            return Err(AlignError::Precondition("max_iters must be >= 1".into()));
        }
        if !(self.inlier_threshold_px > 0.0) {
            return Err(AlignError::Precondition(
                "inlier_threshold_px must be positive".into(),
            ));
        }
        if self.min_inliers < 4 {
            return Err(AlignError::Precondition("min_inliers must be >= 4".into()));
        }
        Ok(())
    }

    /// Seed for one band's RANSAC run, derived so parallel per-band execution
    /// reproduces the sequential result.
    pub fn band_seed(&self, band_index: usize) -> u64 {
        self.seed ^ (band_index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }
}

/// Canonical five-band order for stacked captures.
const CANONICAL_ORDER: [&str; 5] = ["B", "G", "R", "RE", "NIR"];

/// Registers every band of a capture onto `bands[ref_index]`, stacks the
/// warped planes (reordering to canonical B,G,R,RE,NIR when those are exactly
/// the bands present), and crops to `trim`.
pub fn align_and_stack(
    bands: &[Band],
    metas: &[BandMeta],
    ref_index: usize,
    cfg: &RansacConfig,
    trim: Rect,
) -> Result<MultispectralImage, AlignError> {
    cfg.validate()?;
    if bands.is_empty() || bands.len() != metas.len() {
        return Err(AlignError::Precondition(format!(
            "{} bands with {} metadata entries",
            bands.len(),
            metas.len()
        )));
    }
    if ref_index >= bands.len() {
        return Err(AlignError::Precondition(format!(
            "ref_index {} out of range for {} bands",
            ref_index,
            bands.len()
        )));
    }
    let (w, h) = (bands[ref_index].width, bands[ref_index].height);
    for (i, b) in bands.iter().enumerate() {
        if b.width != w || b.height != h {
            return Err(AlignError::Precondition(format!(
                "band {} is {}x{}, expected {}x{}",
                i, b.width, b.height, w, h
            )));
        }
    }

    let ref_band = &bands[ref_index];
    let mut warped: Vec<Band> = Vec::with_capacity(bands.len());
    for (i, band) in bands.iter().enumerate() {
        if i == ref_index {
            warped.push(band.clone());
            continue;
        }
        let step = |e: AlignError| match e {
            AlignError::Degenerate(msg) => {
                AlignError::Degenerate(format!("band {} ({}): {}", i, metas[i].name, msg))
            }
            other => other,
        };
        let pairs = find_correspondences(
            ref_band,
            band,
            DEFAULT_GRID_STEP,
            DEFAULT_WINDOW,
            DEFAULT_SEARCH_RADIUS,
        )
        .map_err(step)?;
        if pairs.len() < cfg.min_inliers {
            return Err(AlignError::Degenerate(format!(
                "band {} ({}): {} correspondences below min_inliers {}",
                i,
                metas[i].name,
                pairs.len(),
                cfg.min_inliers
            )));
        }
        let band_cfg = RansacConfig {
            seed: cfg.band_seed(i),
            ..cfg.clone()
        };
        let hmat = estimate_homography(&pairs, &band_cfg).map_err(step)?;
        warped.push(warp_band(band, &hmat, (w, h))?);
    }

    // Stack in canonical order when this is exactly the default band set.
    let mut order: Vec<usize> = (0..bands.len()).collect();
    let canonical: Vec<Option<usize>> = CANONICAL_ORDER
        .iter()
        .map(|name| metas.iter().position(|m| m.name == *name))
        .collect();
    if metas.len() == CANONICAL_ORDER.len() && canonical.iter().all(|p| p.is_some()) {
        order = canonical.into_iter().map(|p| p.unwrap()).collect();
    }

    let mut data = Vec::with_capacity(bands.len() * w * h);
    let mut ordered_metas = Vec::with_capacity(bands.len());
    for &i in &order {
        data.extend(warped[i].data.iter().map(|&v| v.clamp(0.0, 1.0)));
        ordered_metas.push(metas[i].clone());
    }
    let stack = MultispectralImage::new(w, h, ordered_metas, data)?;
    Ok(crate::raster::crop(&stack, trim)?)
}
