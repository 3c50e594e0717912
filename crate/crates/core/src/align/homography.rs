//! Projective transform estimation: normalized DLT inside a RANSAC loop.

use nalgebra::{DMatrix, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{AlignError, Correspondence, RansacConfig};

/// 3×3 projective transform mapping target-band coordinates into the
/// reference band, normalized so `m[2][2] == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self, AlignError> {
        let w = m[2][2];
        if w.abs() < 1e-12 {
            return Err(AlignError::Degenerate(
                "homography cannot be normalized (m[2][2] ~ 0)".into(),
            ));
        }
        let mut n = m;
        for row in n.iter_mut() {
            for v in row.iter_mut() {
                *v /= w;
            }
        }
        let h = Self { m: n };
        if h.det().abs() <= 1e-12 {
            return Err(AlignError::Degenerate("homography is singular".into()));
        }
        Ok(h)
    }

    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            m: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Applies the transform to a point. Points carried to infinity come back
    /// as non-finite coordinates; callers sampling images treat those as
    /// out of range.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let u = m[0][0] * x + m[0][1] * y + m[0][2];
        let v = m[1][0] * x + m[1][1] * y + m[1][2];
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (u / w, v / w)
    }

    pub fn inverse(&self) -> Result<Homography, AlignError> {
        let m = Matrix3::from_fn(|r, c| self.m[r][c]);
        let inv = m
            .try_inverse()
            .ok_or_else(|| AlignError::Degenerate("homography is singular".into()))?;
        Homography::new([
            [inv[(0, 0)], inv[(0, 1)], inv[(0, 2)]],
            [inv[(1, 0)], inv[(1, 1)], inv[(1, 2)]],
            [inv[(2, 0)], inv[(2, 1)], inv[(2, 2)]],
        ])
    }

    /// `self · other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Homography) -> Result<Homography, AlignError> {
        let a = Matrix3::from_fn(|r, c| self.m[r][c]);
        let b = Matrix3::from_fn(|r, c| other.m[r][c]);
        let p = a * b;
        Homography::new([
            [p[(0, 0)], p[(0, 1)], p[(0, 2)]],
            [p[(1, 0)], p[(1, 1)], p[(1, 2)]],
            [p[(2, 0)], p[(2, 1)], p[(2, 2)]],
        ])
    }
}

/// Similarity transform taking the points to centroid 0, mean distance √2.
fn hartley_normalization(points: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for &(x, y) in points {
        cx += x;
        cy += y;
    }
    cx /= n;
    cy /= n;
    let mut dist = 0.0;
    for &(x, y) in points {
        dist += ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
    }
    dist /= n;
    if dist < 1e-9 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / dist;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

/// Direct linear transform on ≥ 4 correspondences with Hartley normalization.
/// Returns `None` on degenerate configurations (collinear points, rank
/// deficiency).
fn dlt(pairs: &[&Correspondence]) -> Option<Homography> {
    if pairs.len() < 4 {
        return None;
    }
    let refs: Vec<(f64, f64)> = pairs.iter().map(|c| c.ref_xy).collect();
    let tgts: Vec<(f64, f64)> = pairs.iter().map(|c| c.tgt_xy).collect();
    let t_ref = hartley_normalization(&refs)?;
    let t_tgt = hartley_normalization(&tgts)?;

    // One extra zero row keeps the matrix at least 9 tall, so the thin SVD
    // carries all nine right singular vectors, null space included.
    let mut a = DMatrix::<f64>::zeros(2 * pairs.len() + 1, 9);
    for (i, c) in pairs.iter().enumerate() {
        let rp = t_ref * nalgebra::Vector3::new(c.ref_xy.0, c.ref_xy.1, 1.0);
        let tp = t_tgt * nalgebra::Vector3::new(c.tgt_xy.0, c.tgt_xy.1, 1.0);
        let (u, v) = (rp[0], rp[1]);
        let (x, y) = (tp[0], tp[1]);
        let r0 = 2 * i;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        let r1 = r0 + 1;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }

    let svd = a.svd(true, true);
    let v_t = svd.v_t.as_ref()?;
    let sv = &svd.singular_values;
    let mut min_i = 0;
    for i in 1..sv.len() {
        if sv[i] < sv[min_i] {
            min_i = i;
        }
    }
    // A second near-zero singular value means the solution is not unique
    // (e.g. three collinear points in a minimal sample).
    let max_sv = sv.iter().cloned().fold(0.0, f64::max);
    let near_null = sv.iter().filter(|&&s| s < 1e-8 * max_sv.max(1e-300)).count();
    if near_null > 1 {
        return None;
    }
    let h = v_t.row(min_i);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_ref_inv = t_ref.try_inverse()?;
    let full = t_ref_inv * hn * t_tgt;
    Homography::new([
        [full[(0, 0)], full[(0, 1)], full[(0, 2)]],
        [full[(1, 0)], full[(1, 1)], full[(1, 2)]],
        [full[(2, 0)], full[(2, 1)], full[(2, 2)]],
    ])
    .ok()
}

fn reprojection_error(h: &Homography, c: &Correspondence) -> f64 {
    let (u, v) = h.apply(c.tgt_xy.0, c.tgt_xy.1);
    if !u.is_finite() || !v.is_finite() {
        return f64::INFINITY;
    }
    ((u - c.ref_xy.0).powi(2) + (v - c.ref_xy.1).powi(2)).sqrt()
}

/// RANSAC over minimal 4-point DLT fits, then one DLT refit on the full
/// consensus set. Deterministic for a given `cfg.seed`.
pub fn estimate_homography(
    pairs: &[Correspondence],
    cfg: &RansacConfig,
) -> Result<Homography, AlignError> {
    cfg.validate()?;
    if pairs.len() < 4 {
        return Err(AlignError::Degenerate(format!(
            "{} correspondences, need at least 4",
            pairs.len()
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut best_inliers: Vec<usize> = Vec::new();
    let mut best_err = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        let idx = rand::seq::index::sample(&mut rng, pairs.len(), 4);
        let sample: Vec<&Correspondence> = idx.iter().map(|i| &pairs[i]).collect();
        let Some(h) = dlt(&sample) else { continue };
        let mut inliers = Vec::new();
        let mut err_sum = 0.0;
        for (i, c) in pairs.iter().enumerate() {
            let e = reprojection_error(&h, c);
            if e <= cfg.inlier_threshold_px {
                inliers.push(i);
                err_sum += e;
            }
        }
        if inliers.len() > best_inliers.len()
            || (inliers.len() == best_inliers.len() && err_sum < best_err)
        {
            best_err = err_sum;
            let full_consensus = inliers.len() == pairs.len();
            best_inliers = inliers;
            if full_consensus {
                break;
            }
        }
    }

    let needed = cfg.min_inliers.max(4);
    if best_inliers.len() < needed {
        return Err(AlignError::Degenerate(format!(
            "consensus of {} below required {}",
            best_inliers.len(),
            needed
        )));
    }
    let consensus: Vec<&Correspondence> = best_inliers.iter().map(|&i| &pairs[i]).collect();
    dlt(&consensus).ok_or_else(|| {
        AlignError::Degenerate("consensus set is degenerate for a final fit".into())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs_from<F: Fn(f64, f64) -> (f64, f64)>(
        pts: &[(f64, f64)],
        map: F,
    ) -> Vec<Correspondence> {
        pts.iter()
            .map(|&(x, y)| {
                let (u, v) = map(x, y);
                Correspondence {
                    ref_xy: (u, v),
                    tgt_xy: (x, y),
                    score: 1.0,
                }
            })
            .collect()
    }

    fn grid_points(n: usize) -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        let mut k = 0u64;
        while pts.len() < n {
            k += 1;
            // Low-discrepancy-ish scatter over a 200x160 frame.
            let x = (k as f64 * 47.0) % 200.0;
            let y = (k as f64 * 91.0) % 160.0;
            pts.push((x, y));
        }
        pts
    }

    fn cfg(seed: u64) -> RansacConfig {
        RansacConfig {
            max_iters: 500,
            inlier_threshold_px: 1.5,
            min_inliers: 4,
            seed,
        }
    }

    #[test]
    fn identity_from_self_correspondences() {
        let pairs = pairs_from(&grid_points(8), |x, y| (x, y));
        let h = estimate_homography(&pairs, &cfg(1)).unwrap();
        let id = Homography::identity();
        for r in 0..3 {
            for c in 0..3 {
                assert!((h.matrix()[r][c] - id.matrix()[r][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pure_translation_recovered() {
        let pairs = pairs_from(&grid_points(10), |x, y| (x + 5.0, y + 3.0));
        let h = estimate_homography(&pairs, &cfg(2)).unwrap();
        let want = [[1.0, 0.0, 5.0], [0.0, 1.0, 3.0], [0.0, 0.0, 1.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert!(
                    (h.matrix()[r][c] - want[r][c]).abs() < 1e-6,
                    "got {:?}",
                    h.matrix()
                );
            }
        }
    }

    #[test]
    fn exact_projective_map_recovered_from_four_points() {
        let truth = Homography::new([
            [1.02, 0.015, -3.0],
            [-0.01, 0.985, 4.5],
            [1.1e-5, -0.9e-5, 1.0],
        ])
        .unwrap();
        let pts = [(10.0, 12.0), (180.0, 20.0), (30.0, 150.0), (170.0, 140.0)];
        let pairs = pairs_from(&pts, |x, y| truth.apply(x, y));
        let h = estimate_homography(&pairs, &cfg(3)).unwrap();
        for &(x, y) in &grid_points(25) {
            let (u1, v1) = truth.apply(x, y);
            let (u2, v2) = h.apply(x, y);
            assert!(((u1 - u2).powi(2) + (v1 - v2).powi(2)).sqrt() < 1e-6);
        }
    }

    #[test]
    fn outliers_are_rejected() {
        let truth = Homography::new([
            [0.99, -0.02, 6.0],
            [0.018, 1.01, -4.0],
            [0.8e-5, 1.2e-5, 1.0],
        ])
        .unwrap();
        let mut pairs = pairs_from(&grid_points(70), |x, y| truth.apply(x, y));
        // Corrupt 30% with junk targets.
        for (k, c) in pairs.iter_mut().enumerate().filter(|(k, _)| k % 10 < 3) {
            c.ref_xy = ((k as f64 * 13.7) % 200.0, (k as f64 * 29.3) % 160.0);
        }
        let h = estimate_homography(&pairs, &cfg(4)).unwrap();
        let mut max_err: f64 = 0.0;
        for (k, c) in pairs.iter().enumerate() {
            if k % 10 < 3 {
                continue;
            }
            let (u, v) = h.apply(c.tgt_xy.0, c.tgt_xy.1);
            let e = ((u - c.ref_xy.0).powi(2) + (v - c.ref_xy.1).powi(2)).sqrt();
            max_err = max_err.max(e);
        }
        assert!(max_err < 0.5, "max inlier reprojection error {}", max_err);
    }

    #[test]
    fn deterministic_given_seed() {
        let truth = Homography::translation(2.0, -7.0);
        let mut pairs = pairs_from(&grid_points(40), |x, y| truth.apply(x, y));
        for c in pairs.iter_mut().step_by(5) {
            c.tgt_xy.0 += 25.0;
        }
        let a = estimate_homography(&pairs, &cfg(99)).unwrap();
        let b = estimate_homography(&pairs, &cfg(99)).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn collinear_points_rejected() {
        let pts: Vec<(f64, f64)> = (0..12).map(|i| (i as f64 * 10.0, 5.0)).collect();
        let pairs = pairs_from(&pts, |x, y| (x + 1.0, y));
        assert!(matches!(
            estimate_homography(&pairs, &cfg(5)),
            Err(AlignError::Degenerate(_))
        ));
    }

    #[test]
    fn too_few_pairs_rejected() {
        let pairs = pairs_from(&grid_points(3), |x, y| (x, y));
        assert!(matches!(
            estimate_homography(&pairs, &cfg(6)),
            Err(AlignError::Degenerate(_))
        ));
    }

    #[test]
    fn compose_and_inverse_are_consistent() {
        let a = Homography::new([[1.1, 0.02, 3.0], [-0.03, 0.95, -2.0], [1e-5, 2e-5, 1.0]])
            .unwrap();
        let ainv = a.inverse().unwrap();
        let id = a.compose(&ainv).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((id.matrix()[r][c] - want).abs() < 1e-9);
            }
        }
    }
}
