//! Whole-scene inference: per-band standardization, overlapping tiles with
//! center-crop stitching, and per-pixel argmax.

use crate::raster::{LabelMask, MultispectralImage};
use crate::tensor::Tensor4;

use super::{Model, ModelError};

/// Tile origins along one axis: step `tile - 2*overlap`, with the final
/// origin pulled back so the last tile ends exactly at `size`.
fn tile_starts(size: usize, tile: usize, step: usize) -> Vec<usize> {
    if tile >= size {
        return vec![0];
    }
    let mut starts = vec![0];
    loop {
        let last = *starts.last().expect("non-empty");
        if last + tile >= size {
            break;
        }
        starts.push((last + step).min(size - tile));
    }
    starts
}

/// Stitched region of a tile: pixels more than `overlap` from every
/// interior tile edge. Edges touching the image border keep their margin.
fn core_range(start: usize, tile: usize, size: usize, overlap: usize) -> (usize, usize) {
    let lo = if start == 0 { 0 } else { start + overlap };
    let hi = if start + tile >= size {
        size
    } else {
        start + tile - overlap
    };
    (lo, hi)
}

impl Model {
    fn window_tensor(
        &self,
        image: &MultispectralImage,
        stats: &[(f64, f64)],
        x0: usize,
        y0: usize,
        tw: usize,
        th: usize,
    ) -> Tensor4 {
        let bands = self.config.in_channels;
        let mut t = Tensor4::zeros([1, bands, th, tw]);
        let width = image.width();
        for b in 0..bands {
            let (mean, std) = stats[b];
            let denom = std.max(1e-12);
            let plane = image.plane(b);
            let dst = t.plane_mut(0, b);
            for y in 0..th {
                let src_row = &plane[(y0 + y) * width + x0..(y0 + y) * width + x0 + tw];
                let dst_row = &mut dst[y * tw..(y + 1) * tw];
                for (d, &s) in dst_row.iter_mut().zip(src_row) {
                    *d = (s as f64 - mean) / denom;
                }
            }
        }
        t
    }

    /// Standardizes the `tw`x`th` window at `(x0, y0)` of `image` into a
    /// `[1, C, th, tw]` input tensor using the stored per-band statistics.
    /// Training front ends use this so inputs are prepared exactly as
    /// [`Model::predict_mask`] prepares its tiles.
    pub fn standardized_window(
        &self,
        image: &MultispectralImage,
        x0: usize,
        y0: usize,
        tw: usize,
        th: usize,
    ) -> Result<Tensor4, ModelError> {
        let stats = self.norm.as_ref().ok_or_else(|| {
            ModelError::Stats("model has no normalization statistics; train first".into())
        })?;
        if image.band_count() != self.config.in_channels {
            return Err(ModelError::Shape(format!(
                "image has {} bands, model expects {}",
                image.band_count(),
                self.config.in_channels
            )));
        }
        if tw == 0 || th == 0 || x0 + tw > image.width() || y0 + th > image.height() {
            return Err(ModelError::Shape(format!(
                "window {tw}x{th} at ({x0}, {y0}) outside {}x{} image",
                image.width(),
                image.height()
            )));
        }
        Ok(self.window_tensor(image, stats, x0, y0, tw, th))
    }

    /// Argmax of main logits into `mask` over the given region; ties go to
    /// the lower class code.
    fn stitch_argmax(
        logits: &Tensor4,
        mask: &mut LabelMask,
        x0: usize,
        y0: usize,
        lo_x: usize,
        hi_x: usize,
        lo_y: usize,
        hi_y: usize,
    ) {
        let classes = logits.c();
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let mut best = f64::NEG_INFINITY;
                let mut code = 0u8;
                for k in 0..classes {
                    let v = logits.at(0, k, y - y0, x - x0);
                    if v > best {
                        best = v;
                        code = k as u8;
                    }
                }
                mask.set(x, y, code);
            }
        }
    }

    /// Segments a whole scene. The image is standardized band by band with
    /// the stored statistics, cut into `tile`-sized windows overlapping by
    /// `overlap` pixels per side, and each window's center contributes to
    /// the stitched result. A tile covering the full image reduces to one
    /// untiled forward pass.
    pub fn predict_mask(
        &self,
        image: &MultispectralImage,
        tile: usize,
        overlap: usize,
    ) -> Result<LabelMask, ModelError> {
        let stats = self
            .norm
            .as_ref()
            .ok_or_else(|| {
                ModelError::Stats("model has no normalization statistics; train first".into())
            })?
            .clone();
        if image.band_count() != self.config.in_channels {
            return Err(ModelError::Shape(format!(
                "image has {} bands, model expects {}",
                image.band_count(),
                self.config.in_channels
            )));
        }
        let (w, h) = (image.width(), image.height());
        let min = self.config.min_input_side();
        if w < min || h < min {
            return Err(ModelError::Shape(format!(
                "image {w}x{h} under the {min}x{min} minimum"
            )));
        }
        let (tile_w, tile_h) = (tile.min(w), tile.min(h));
        let single = tile >= w && tile >= h;
        if !single {
            if tile < min {
                return Err(ModelError::Shape(format!(
                    "tile {tile} under the {min} minimum"
                )));
            }
            if tile <= 2 * overlap {
                return Err(ModelError::Shape(format!(
                    "tile {tile} must exceed twice the overlap {overlap}"
                )));
            }
        }

        let step = tile.saturating_sub(2 * overlap).max(1);
        let mut mask = LabelMask::filled(w, h, 0);
        for &y0 in &tile_starts(h, tile_h, step) {
            let (lo_y, hi_y) = core_range(y0, tile_h, h, overlap);
            for &x0 in &tile_starts(w, tile_w, step) {
                let (lo_x, hi_x) = core_range(x0, tile_w, w, overlap);
                let input = self.window_tensor(image, &stats, x0, y0, tile_w, tile_h);
                let (main, _) = self.forward(&input)?;
                Self::stitch_argmax(&main, &mut mask, x0, y0, lo_x, hi_x, lo_y, hi_y);
            }
        }
        Ok(mask)
    }
}
