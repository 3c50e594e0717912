//! Projective resampling of a single band into reference coordinates.

use crate::raster::Band;

use super::{AlignError, Homography};

/// Inverse-maps every output pixel through `h` and samples the source band
/// bilinearly. Samples outside the source produce 0.
pub fn warp_band(band: &Band, h: &Homography, out_size: (usize, usize)) -> Result<Band, AlignError> {
    let (out_w, out_h) = out_size;
    if out_w == 0 || out_h == 0 {
        return Err(AlignError::Precondition("output size must be at least 1x1".into()));
    }
    let inv = h.inverse()?;
    let (src_w, src_h) = (band.width as f64, band.height as f64);
    let mut out = Band::zeros(out_w, out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            if !sx.is_finite() || !sy.is_finite() {
                continue;
            }
            if sx < 0.0 || sy < 0.0 || sx > src_w - 1.0 || sy > src_h - 1.0 {
                continue;
            }
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(band.width - 1);
            let y1 = (y0 + 1).min(band.height - 1);
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let v = band.at(x0, y0) as f64 * (1.0 - fy) * (1.0 - fx)
                + band.at(x1, y0) as f64 * (1.0 - fy) * fx
                + band.at(x0, y1) as f64 * fy * (1.0 - fx)
                + band.at(x1, y1) as f64 * fy * fx;
            out.set(x, y, v as f32);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_band(w: usize, h: usize) -> Band {
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let v = 0.5
                    + 0.25 * ((x as f64) * 0.05).sin()
                    + 0.2 * ((y as f64) * 0.04 + 1.0).cos();
                data.push(v as f32);
            }
        }
        Band::new(w, h, data).unwrap()
    }

    #[test]
    fn identity_warp_is_exact_copy() {
        let band = gradient_band(50, 40);
        let out = warp_band(&band, &Homography::identity(), (50, 40)).unwrap();
        assert_eq!(out, band);
    }

    #[test]
    fn integer_translation_shifts_pixels_exactly() {
        let band = gradient_band(30, 25);
        // h maps target → reference as a (+4, +2) shift, so the warped image
        // holds band(x−4, y−2) with zero fill on the leading edges.
        let h = Homography::translation(4.0, 2.0);
        let out = warp_band(&band, &h, (30, 25)).unwrap();
        for y in 0..25 {
            for x in 0..30 {
                let want = if x >= 4 && y >= 2 {
                    band.at(x - 4, y - 2)
                } else {
                    0.0
                };
                assert_eq!(out.at(x, y), want, "at ({}, {})", x, y);
            }
        }
    }

    #[test]
    fn warp_round_trip_close_on_interior() {
        let band = gradient_band(80, 70);
        let h = Homography::new([
            [1.01, 0.02, 1.5],
            [-0.015, 0.99, -2.0],
            [1e-5, -2e-5, 1.0],
        ])
        .unwrap();
        let there = warp_band(&band, &h, (80, 70)).unwrap();
        let back = warp_band(&there, &h.inverse().unwrap(), (80, 70)).unwrap();
        let mut max_err = 0.0f32;
        for y in 10..60 {
            for x in 10..70 {
                max_err = max_err.max((back.at(x, y) - band.at(x, y)).abs());
            }
        }
        assert!(max_err < 1e-3, "interior round-trip error {}", max_err);
    }

    #[test]
    fn composition_commutes_with_sequential_warps() {
        let band = gradient_band(90, 80);
        let h1 = Homography::new([[1.0, 0.01, 2.0], [0.0, 1.0, -1.5], [0.0, 0.0, 1.0]]).unwrap();
        let h2 = Homography::new([[0.99, 0.0, -1.0], [0.02, 1.01, 2.5], [0.0, 0.0, 1.0]]).unwrap();
        let two_step = warp_band(&warp_band(&band, &h1, (90, 80)).unwrap(), &h2, (90, 80)).unwrap();
        let one_step = warp_band(&band, &h2.compose(&h1).unwrap(), (90, 80)).unwrap();
        let mut max_err = 0.0f32;
        for y in 12..68 {
            for x in 12..78 {
                max_err = max_err.max((two_step.at(x, y) - one_step.at(x, y)).abs());
            }
        }
        assert!(max_err < 1e-3, "composition mismatch {}", max_err);
    }

    #[test]
    fn output_size_is_respected() {
        let band = gradient_band(40, 30);
        let out = warp_band(&band, &Homography::identity(), (25, 60)).unwrap();
        assert_eq!((out.width, out.height), (25, 60));
    }
}
