//! Raster data model and file I/O.
//!
//! Reflectance stacks are planar rasters: one `f32` plane per spectral band,
//! band-major then row-major, every value in `[0, 1]`. Stacks and single
//! bands travel on disk in the LMS container (see [`lms`]), label masks as
//! binary PGM (see [`pgm`]).

mod lms;
mod pgm;

pub use lms::{read_raster, write_raster, LMS_MAGIC, LMS_VERSION};
pub use pgm::{read_mask, write_mask};

use std::io;
use thiserror::Error;

/// Errors produced by raster construction and I/O.
#[derive(Debug, Error)]
pub enum RasterError {
    /// The file does not conform to the container layout.
    #[error("format error: {0}")]
    Format(String),
    /// A reflectance value is non-finite or outside `[0, 1]`.
    #[error("range error: {0}")]
    Range(String),
    /// A rectangle or index does not fit inside the raster.
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Label code for pixels outside any class (water, rock, vegetation, ...).
pub const CLASS_BACKGROUND: u8 = 0;
/// Label code for the target species.
pub const CLASS_LUDWIGIA: u8 = 1;
/// Label code for pixels excluded from training and scoring.
pub const CLASS_IGNORE: u8 = 255;

/// Spectral metadata for one band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMeta {
    /// Band center wavelength in nanometres.
    pub center_nm: f32,
    /// Half-tolerance of the band filter in nanometres.
    pub fwhm_nm: f32,
    /// Short label, at most 4 bytes (B, G, R, RE, NIR).
    pub name: String,
}

impl BandMeta {
    pub fn new(name: &str, center_nm: f32, fwhm_nm: f32) -> Self {
        Self {
            center_nm,
            fwhm_nm,
            name: name.to_string(),
        }
    }

    fn validate(&self) -> Result<(), RasterError> {
        if !(self.center_nm > 0.0) || self.fwhm_nm < 0.0 {
            return Err(RasterError::Range(format!(
                "band {}: center {} nm, fwhm {} nm",
                self.name, self.center_nm, self.fwhm_nm
            )));
        }
        if self.name.len() > 4 {
            return Err(RasterError::Format(format!(
                "band name {:?} longer than 4 bytes",
                self.name
            )));
        }
        Ok(())
    }
}

/// The five bands of the capture sensor, in canonical stack order.
pub fn default_bands() -> Vec<BandMeta> {
    vec![
        BandMeta::new("B", 450.0, 16.0),
        BandMeta::new("G", 560.0, 16.0),
        BandMeta::new("R", 650.0, 16.0),
        BandMeta::new("RE", 730.0, 16.0),
        BandMeta::new("NIR", 840.0, 26.0),
    ]
}

/// A single reflectance plane, detached from band metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Band {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::Bounds(format!(
                "band data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }
}

/// Axis-aligned pixel rectangle, given by its top-left corner and extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Result<Self, RasterError> {
        if w < 1 || h < 1 {
            return Err(RasterError::Bounds(format!("empty rect {}x{}", w, h)));
        }
        Ok(Self { x, y, w, h })
    }

    /// The `tw`x`th` window centered in a `w`x`h` frame, shrunk to fit when
    /// the frame is smaller than the requested window.
    pub fn centered(w: usize, h: usize, tw: usize, th: usize) -> Self {
        let cw = tw.min(w).max(1);
        let ch = th.min(h).max(1);
        Self {
            x: (w - cw) / 2,
            y: (h - ch) / 2,
            w: cw,
            h: ch,
        }
    }

    fn fits_in(&self, width: usize, height: usize) -> bool {
        self.x + self.w <= width && self.y + self.h <= height
    }
}

/// A multi-band reflectance raster.
///
/// `data` is planar: band-major, then row-major inside each band. All values
/// are finite and in `[0, 1]`; constructors enforce this.
#[derive(Debug, Clone, PartialEq)]
pub struct MultispectralImage {
    width: usize,
    height: usize,
    bands: Vec<BandMeta>,
    data: Vec<f32>,
}

impl MultispectralImage {
    pub fn new(
        width: usize,
        height: usize,
        bands: Vec<BandMeta>,
        data: Vec<f32>,
    ) -> Result<Self, RasterError> {
        if data.len() != width * height * bands.len() {
            return Err(RasterError::Bounds(format!(
                "data length {} does not match {}x{}x{} bands",
                data.len(),
                width,
                height,
                bands.len()
            )));
        }
        for meta in &bands {
            meta.validate()?;
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(RasterError::Range(format!(
                    "value {} at flat index {} outside [0, 1]",
                    v, i
                )));
            }
        }
        Ok(Self {
            width,
            height,
            bands,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn bands(&self) -> &[BandMeta] {
        &self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Flat view of one band plane.
    pub fn plane(&self, band: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[band * n..(band + 1) * n]
    }

    pub fn value(&self, band: usize, x: usize, y: usize) -> f32 {
        self.plane(band)[y * self.width + x]
    }

    /// Copy one band out as a standalone plane.
    pub fn extract_band(&self, band: usize) -> Result<Band, RasterError> {
        if band >= self.bands.len() {
            return Err(RasterError::Bounds(format!(
                "band index {} of {}",
                band,
                self.bands.len()
            )));
        }
        Ok(Band {
            width: self.width,
            height: self.height,
            data: self.plane(band).to_vec(),
        })
    }

    /// Index of the first band with the given name, if any.
    pub fn band_index(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.name == name)
    }
}

/// Per-pixel class codes: 0 background, 1 ludwigia, 255 ignore.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::Bounds(format!(
                "mask data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(&bad) = data
            .iter()
            .find(|&&c| c != CLASS_BACKGROUND && c != CLASS_LUDWIGIA && c != CLASS_IGNORE)
        {
            return Err(RasterError::Range(format!("invalid label code {}", bad)));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, code: u8) -> Self {
        Self {
            width,
            height,
            data: vec![code; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, code: u8) {
        self.data[y * self.width + x] = code;
    }

    pub fn crop(&self, rect: Rect) -> Result<LabelMask, RasterError> {
        if !rect.fits_in(self.width, self.height) {
            return Err(RasterError::Bounds(format!(
                "rect {:?} outside {}x{} mask",
                rect, self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(rect.w * rect.h);
        for y in rect.y..rect.y + rect.h {
            let row = &self.data[y * self.width..y * self.width + self.width];
            data.extend_from_slice(&row[rect.x..rect.x + rect.w]);
        }
        Ok(LabelMask {
            width: rect.w,
            height: rect.h,
            data,
        })
    }
}

/// Cut `rect` out of `image`. Pixels are copied verbatim, band metadata is
/// preserved.
pub fn crop(image: &MultispectralImage, rect: Rect) -> Result<MultispectralImage, RasterError> {
    if !rect.fits_in(image.width, image.height) {
        return Err(RasterError::Bounds(format!(
            "rect {:?} outside {}x{} image",
            rect, image.width, image.height
        )));
    }
    let mut data = Vec::with_capacity(rect.w * rect.h * image.bands.len());
    for b in 0..image.bands.len() {
        let plane = image.plane(b);
        for y in rect.y..rect.y + rect.h {
            let row = &plane[y * image.width..y * image.width + image.width];
            data.extend_from_slice(&row[rect.x..rect.x + rect.w]);
        }
    }
    Ok(MultispectralImage {
        width: rect.w,
        height: rect.h,
        bands: image.bands.clone(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize, nbands: usize) -> MultispectralImage {
        let mut data = Vec::new();
        for b in 0..nbands {
            for y in 0..h {
                for x in 0..w {
                    data.push(((b + 1) * (y * w + x)) as f32 / ((nbands + 1) * w * h) as f32);
                }
            }
        }
        let bands = (0..nbands)
            .map(|i| BandMeta::new(&format!("b{}", i), 400.0 + 100.0 * i as f32, 10.0))
            .collect();
        MultispectralImage::new(w, h, bands, data).unwrap()
    }

    #[test]
    fn image_rejects_out_of_range_values() {
        let bands = vec![BandMeta::new("B", 450.0, 16.0)];
        let err = MultispectralImage::new(2, 1, bands.clone(), vec![0.5, 1.5]).unwrap_err();
        assert!(matches!(err, RasterError::Range(_)));
        let err = MultispectralImage::new(2, 1, bands, vec![0.5, f32::NAN]).unwrap_err();
        assert!(matches!(err, RasterError::Range(_)));
    }

    #[test]
    fn image_rejects_wrong_length() {
        let bands = vec![BandMeta::new("B", 450.0, 16.0)];
        assert!(MultispectralImage::new(2, 2, bands, vec![0.0; 3]).is_err());
    }

    #[test]
    fn crop_full_extent_is_identity() {
        let img = gradient_image(7, 5, 3);
        let out = crop(&img, Rect::new(0, 0, 7, 5).unwrap()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn crop_centered_trim_matches_sensor_frame() {
        // 1600x1300 sensor frame trimmed to the centered 1400x1100 window.
        let rect = Rect::centered(1600, 1300, 1400, 1100);
        assert_eq!(rect, Rect::new(100, 100, 1400, 1100).unwrap());
    }

    #[test]
    fn crop_out_of_bounds_rejected() {
        let img = gradient_image(6, 4, 1);
        let err = crop(&img, Rect::new(3, 0, 4, 2).unwrap()).unwrap_err();
        assert!(matches!(err, RasterError::Bounds(_)));
    }

    #[test]
    fn crop_copies_exact_pixels() {
        let img = gradient_image(8, 6, 2);
        let rect = Rect::new(2, 1, 4, 3).unwrap();
        let out = crop(&img, rect).unwrap();
        for b in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    assert_eq!(out.value(b, x, y), img.value(b, x + 2, y + 1));
                }
            }
        }
        assert_eq!(out.bands(), img.bands());
    }

    #[test]
    fn crop_composition_equals_composed_rect() {
        let img = gradient_image(10, 9, 2);
        let a = Rect::new(1, 2, 8, 6).unwrap();
        let b = Rect::new(2, 1, 5, 4).unwrap();
        let two_step = crop(&crop(&img, a).unwrap(), b).unwrap();
        let composed = Rect::new(a.x + b.x, a.y + b.y, b.w, b.h).unwrap();
        assert_eq!(two_step, crop(&img, composed).unwrap());
    }

    #[test]
    fn mask_rejects_bad_codes() {
        assert!(LabelMask::new(2, 1, vec![0, 7]).is_err());
        assert!(LabelMask::new(2, 1, vec![1, 255]).is_ok());
    }

    #[test]
    fn default_band_set_matches_sensor_spec() {
        let bands = default_bands();
        let expect = [
            ("B", 450.0, 16.0),
            ("G", 560.0, 16.0),
            ("R", 650.0, 16.0),
            ("RE", 730.0, 16.0),
            ("NIR", 840.0, 26.0),
        ];
        assert_eq!(bands.len(), 5);
        for (meta, (name, center, fwhm)) in bands.iter().zip(expect) {
            assert_eq!(meta.name, name);
            assert_eq!(meta.center_nm, center);
            assert_eq!(meta.fwhm_nm, fwhm);
        }
    }
}
