//! Per-class, per-band reflectance statistics — the spectral signatures that
//! make the target species separable from water and surrounding vegetation.

use thiserror::Error;

use crate::raster::{LabelMask, MultispectralImage, CLASS_IGNORE};

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Mean and population standard deviation of reflectance for one class in one
/// band. Present only when at least one pixel contributed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignatureStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandSignature {
    pub band: String,
    pub center_nm: f32,
    pub count: usize,
    /// `None` when the class has no pixels (statistics undefined).
    pub stats: Option<SignatureStats>,
}

/// Spectral signature of one class: statistics for every band of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSignature {
    pub class_code: u8,
    pub per_band: Vec<BandSignature>,
}

/// Computes, for each requested class code, the per-band mean and population
/// standard deviation of reflectance over pixels carrying that code. Pixels
/// coded ignore (255) never contribute, even if 255 is requested.
pub fn signature_table(
    image: &MultispectralImage,
    mask: &LabelMask,
    classes: &[u8],
) -> Result<Vec<ClassSignature>, SpectraError> {
    if image.width() != mask.width || image.height() != mask.height {
        return Err(SpectraError::Dimension(format!(
            "image {}x{} vs mask {}x{}",
            image.width(),
            image.height(),
            mask.width,
            mask.height
        )));
    }
    let mut out = Vec::with_capacity(classes.len());
    for &class in classes {
        let mut per_band = Vec::with_capacity(image.band_count());
        for (b, meta) in image.bands().iter().enumerate() {
            let plane = image.plane(b);
            let mut count = 0usize;
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            for (&code, &v) in mask.data.iter().zip(plane) {
                if code == class && code != CLASS_IGNORE {
                    let v = v as f64;
                    count += 1;
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let stats = if count > 0 {
                let mean = sum / count as f64;
                let var = (sum_sq / count as f64 - mean * mean).max(0.0);
                Some(SignatureStats {
                    mean,
                    std: var.sqrt(),
                })
            } else {
                None
            };
            per_band.push(BandSignature {
                band: meta.name.clone(),
                center_nm: meta.center_nm,
                count,
                stats,
            });
        }
        out.push(ClassSignature {
            class_code: class,
            per_band,
        });
    }
    Ok(out)
}

/// Renders signatures as CSV: `class,band,center_nm,mean,std,count`, nine
/// decimal digits, `n/a` for undefined statistics.
pub fn signature_csv(signatures: &[ClassSignature]) -> String {
    let mut out = String::from("class,band,center_nm,mean,std,count\n");
    for sig in signatures {
        for band in &sig.per_band {
            let (mean, std) = match band.stats {
                Some(s) => (format!("{:.9}", s.mean), format!("{:.9}", s.std)),
                None => ("n/a".into(), "n/a".into()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                sig.class_code, band.band, band.center_nm, mean, std, band.count
            ));
        }
    }
    out
}
