//! Grid-based template matching between two bands using normalized
//! cross-correlation, with quadratic subpixel refinement of the peak.

use crate::raster::Band;

use super::{AlignError, Correspondence};

/// Windows whose variance falls below this are treated as textureless and
/// produce no candidate.
const VARIANCE_FLOOR: f64 = 1e-10;

struct WindowStats {
    mean: f64,
    /// Sum of squared deviations from the mean.
    ssd: f64,
}

fn window_stats(band: &Band, cx: usize, cy: usize, half: usize) -> WindowStats {
    let count = ((2 * half + 1) * (2 * half + 1)) as f64;
    let mut sum = 0.0;
    for y in cy - half..=cy + half {
        for &v in &band.row(y)[cx - half..=cx + half] {
            sum += v as f64;
        }
    }
    let mean = sum / count;
    let mut ssd = 0.0;
    for y in cy - half..=cy + half {
        for &v in &band.row(y)[cx - half..=cx + half] {
            let d = v as f64 - mean;
            ssd += d * d;
        }
    }
    WindowStats { mean, ssd }
}

fn ncc(
    ref_band: &Band,
    ref_c: (usize, usize),
    ref_stats: &WindowStats,
    tgt_band: &Band,
    tgt_c: (usize, usize),
    half: usize,
) -> Option<f64> {
    let tgt_stats = window_stats(tgt_band, tgt_c.0, tgt_c.1, half);
    if tgt_stats.ssd < VARIANCE_FLOOR {
        return None;
    }
    let mut cross = 0.0;
    for dy in 0..=2 * half {
        let ry = ref_c.1 - half + dy;
        let ty = tgt_c.1 - half + dy;
        let rrow = &ref_band.row(ry)[ref_c.0 - half..=ref_c.0 + half];
        let trow = &tgt_band.row(ty)[tgt_c.0 - half..=tgt_c.0 + half];
        for (&a, &b) in rrow.iter().zip(trow) {
            cross += (a as f64 - ref_stats.mean) * (b as f64 - tgt_stats.mean);
        }
    }
    Some(cross / (ref_stats.ssd * tgt_stats.ssd).sqrt())
}

/// Offset of a 1-D quadratic vertex through `(c_m, c_0, c_p)` at −1/0/+1,
/// clamped to ±0.5.
fn quadratic_peak_offset(c_m: f64, c_0: f64, c_p: f64) -> f64 {
    let denom = c_m - 2.0 * c_0 + c_p;
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    (0.5 * (c_m - c_p) / denom).clamp(-0.5, 0.5)
}

/// Searches, for every grid point of the reference band with enough local
/// texture, the best-correlating window in the target band within
/// `search_radius` pixels, refined to subpixel by a quadratic fit.
pub fn find_correspondences(
    ref_band: &Band,
    tgt_band: &Band,
    grid_step: usize,
    window: usize,
    search_radius: usize,
) -> Result<Vec<Correspondence>, AlignError> {
    if ref_band.width != tgt_band.width || ref_band.height != tgt_band.height {
        return Err(AlignError::Precondition(format!(
            "band sizes {}x{} vs {}x{}",
            ref_band.width, ref_band.height, tgt_band.width, tgt_band.height
        )));
    }
    if window % 2 == 0 || window == 0 {
        return Err(AlignError::Precondition(format!(
            "window {} must be odd",
            window
        )));
    }
    if grid_step == 0 {
        return Err(AlignError::Precondition("grid_step must be >= 1".into()));
    }
    let half = window / 2;
    let (w, h) = (ref_band.width, ref_band.height);
    if w < window || h < window {
        return Err(AlignError::Precondition(format!(
            "bands {}x{} smaller than the {}px window",
            w, h, window
        )));
    }

    let r = search_radius as isize;
    let side = (2 * search_radius + 1) as isize;
    let mut matches = Vec::new();
    let mut scores = vec![f64::NAN; (side * side) as usize];

    // Grid points keep a margin of window-half plus search radius, so every
    // candidate displacement has a fully valid target window; border points
    // would otherwise systematically snap to truncated, biased peaks.
    let margin = half + search_radius;
    let mut cy = margin;
    while cy + margin < h {
        let mut cx = margin;
        while cx + margin < w {
            let ref_stats = window_stats(ref_band, cx, cy, half);
            if ref_stats.ssd >= VARIANCE_FLOOR {
                scores.fill(f64::NAN);
                let mut best: Option<(isize, isize, f64)> = None;
                for dy in -r..=r {
                    let ty = cy as isize + dy;
                    if ty < half as isize || ty + half as isize >= h as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let tx = cx as isize + dx;
                        if tx < half as isize || tx + half as isize >= w as isize {
                            continue;
                        }
                        if let Some(s) = ncc(
                            ref_band,
                            (cx, cy),
                            &ref_stats,
                            tgt_band,
                            (tx as usize, ty as usize),
                            half,
                        ) {
                            scores[((dy + r) * side + dx + r) as usize] = s;
                            if best.map_or(true, |(_, _, bs)| s > bs) {
                                best = Some((dx, dy, s));
                            }
                        }
                    }
                }
                if let Some((dx, dy, score)) = best {
                    // A perfect correlation is already exact; the quadratic
                    // fit would only add asymmetry noise.
                    let refine = score < 1.0 - 1e-9;
                    let at = |ddx: isize, ddy: isize| -> f64 {
                        let (ix, iy) = (dx + ddx + r, dy + ddy + r);
                        if ix < 0 || ix >= side || iy < 0 || iy >= side {
                            f64::NAN
                        } else {
                            scores[(iy * side + ix) as usize]
                        }
                    };
                    let (lx, rx) = (at(-1, 0), at(1, 0));
                    let sub_x = if refine && lx.is_finite() && rx.is_finite() {
                        quadratic_peak_offset(lx, score, rx)
                    } else {
                        0.0
                    };
                    let (uy, dy2) = (at(0, -1), at(0, 1));
                    let sub_y = if refine && uy.is_finite() && dy2.is_finite() {
                        quadratic_peak_offset(uy, score, dy2)
                    } else {
                        0.0
                    };
                    matches.push(Correspondence {
                        ref_xy: (cx as f64, cy as f64),
                        tgt_xy: (
                            cx as f64 + dx as f64 + sub_x,
                            cy as f64 + dy as f64 + sub_y,
                        ),
                        score,
                    });
                }
            }
            cx += grid_step;
        }
        cy += grid_step;
    }

    if matches.len() < 4 {
        return Err(AlignError::Degenerate(format!(
            "only {} usable correspondences (textureless or out-of-range windows)",
            matches.len()
        )));
    }
    Ok(matches)
}
