use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix3x2, Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng;

use super::{CameraIntrinsics, PoseSE3, VoError};

/// Essential matrix for the convention `X2 = R X1 + t`, so that
/// `x2ᵀ E x1 = 0` for normalized homogeneous image points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix {
    pub e: Matrix3<f64>,
}

pub(crate) fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

impl EssentialMatrix {
    /// `[t]ₓ R`.
    pub fn from_pose(pose: &PoseSE3) -> Self {
        Self { e: skew(&pose.t) * pose.r }
    }

    /// Unit Frobenius norm with the sign fixed so the largest-magnitude entry
    /// is positive. Makes two estimates of the same E directly comparable.
    pub fn canonical(&self) -> Matrix3<f64> {
        let n = self.e.norm();
        if n == 0.0 {
            return self.e;
        }
        let m = self.e / n;
        let imax = m.iamax_full();
        if m[imax] < 0.0 {
            -m
        } else {
            m
        }
    }

    pub fn singular_values(&self) -> Vector3<f64> {
        self.e.singular_values()
    }
}

/// Projects onto the essential manifold: singular values become `(1, 1, 0)`.
pub fn enforce_essential(e: &Matrix3<f64>) -> EssentialMatrix {
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    EssentialMatrix { e: u * d * vt }
}

/// First-order geometric (Sampson) distance of one correspondence, in the
/// units of the input coordinates.
pub fn sampson_distance(e: &Matrix3<f64>, x1: &Vector2<f64>, x2: &Vector2<f64>) -> f64 {
    let p1 = x1.push(1.0);
    let p2 = x2.push(1.0);
    let ex1 = e * p1;
    let etx2 = e.transpose() * p2;
    let r = p2.dot(&ex1);
    let den = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
    if den <= 0.0 {
        return if r == 0.0 { 0.0 } else { f64::INFINITY };
    }
    r.abs() / den.sqrt()
}

// Similarity taking the centroid to the origin and the mean distance to √2.
fn hartley(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(h[(0, 0)] * p.x + h[(0, 2)], h[(1, 1)] * p.y + h[(1, 2)])
}

/// Hartley-normalized eight-point estimate from `n >= 8` normalized
/// correspondences, before projection onto the essential manifold.
pub fn eight_point(x1: &[Vector2<f64>], x2: &[Vector2<f64>]) -> Result<Matrix3<f64>, VoError> {
    let n = x1.len();
    if n < 8 || x2.len() != n {
        return Err(VoError::Insufficient(format!("eight-point needs at least 8 pairs, got {n}")));
    }
    let (t1, t2) = (hartley(x1), hartley(x2));
    // Pad to at least 9 rows so the thin SVD still exposes the null vector.
    let mut a = DMatrix::<f64>::zeros(n.max(9), 9);
    for i in 0..n {
        let p = apply_h(&t1, &x1[i]);
        let q = apply_h(&t2, &x2[i]);
        let row = [q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, 1.0];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.unwrap();
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |b, (i, &s)| if s < b.1 { (i, s) } else { b });
    let f = vt.row(imin);
    let en = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    Ok(t2.transpose() * en * t1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Sampson distance threshold in normalized image coordinates.
    pub threshold: f64,
    /// Below this inlier ratio the estimate is flagged degenerate.
    pub min_inlier_ratio: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            threshold: 1e-3,
            min_inlier_ratio: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssentialEstimate {
    pub essential: EssentialMatrix,
    pub inliers: Vec<bool>,
    pub inlier_ratio: f64,
    pub degenerate: bool,
}

impl EssentialEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// RANSAC over pixel correspondences. Coordinates are normalized by `k`
/// first; the winning hypothesis is refit on all of its inliers.
pub fn estimate_essential_ransac(
    pairs: &[(Vector2<f64>, Vector2<f64>)],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
    rng: &mut impl Rng,
) -> Result<EssentialEstimate, VoError> {
    let n = pairs.len();
    if n < 8 {
        return Err(VoError::Insufficient(format!("RANSAC needs at least 8 pairs, got {n}")));
    }
    let x1: Vec<_> = pairs.iter().map(|p| k.normalize(p.0)).collect();
    let x2: Vec<_> = pairs.iter().map(|p| k.normalize(p.1)).collect();
    let mask = |e: &Matrix3<f64>| -> Vec<bool> {
        x1.iter()
            .zip(&x2)
            .map(|(a, b)| sampson_distance(e, a, b) < cfg.threshold)
            .collect()
    };
    let count = |m: &[bool]| m.iter().filter(|&&b| b).count();

    let mut best: Option<(Matrix3<f64>, Vec<bool>, usize)> = None;
    let mut s1 = Vec::with_capacity(8);
    let mut s2 = Vec::with_capacity(8);
    for _ in 0..cfg.iterations {
        s1.clear();
        s2.clear();
        for i in sample(rng, n, 8) {
            s1.push(x1[i]);
            s2.push(x2[i]);
        }
        let Ok(raw) = eight_point(&s1, &s2) else { continue };
        let e = enforce_essential(&raw).e;
        let m = mask(&e);
        let c = count(&m);
        if best.as_ref().is_none_or(|b| c > b.2) {
            best = Some((e, m, c));
        }
    }
    let (mut e, mut m, mut c) = best.ok_or_else(|| VoError::Insufficient("no RANSAC hypothesis".into()))?;
    if c >= 8 {
        let (r1, r2): (Vec<_>, Vec<_>) = (0..n).filter(|&i| m[i]).map(|i| (x1[i], x2[i])).unzip();
        let refit = enforce_essential(&eight_point(&r1, &r2)?).e;
        let rm = mask(&refit);
        let rc = count(&rm);
        if rc >= c {
            (e, m, c) = (refit, rm, rc);
        }
    }
    let inlier_ratio = c as f64 / n as f64;
    Ok(EssentialEstimate {
        essential: EssentialMatrix { e },
        inliers: m,
        inlier_ratio,
        degenerate: inlier_ratio < cfg.min_inlier_ratio,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Relative motion with `‖t‖ = 1`.
    pub pose: PoseSE3,
    /// Pairs triangulated in front of both cameras by the winner.
    pub support: usize,
    pub considered: usize,
    /// Fewer than half of the considered pairs support the winner.
    pub cheirality_failure: bool,
}

/// Depth (in baseline units) beyond which a triangulated point is treated as
/// at infinity and does not vote.
pub const MAX_DEPTH_RATIO: f64 = 1000.0;

// Depths (λ1, λ2) with λ2 x2 = R λ1 x1 + t, least squares.
fn triangulate_depths(r: &Matrix3<f64>, t: &Vector3<f64>, x1: &Vector3<f64>, x2: &Vector3<f64>) -> Option<(f64, f64)> {
    let a = Matrix3x2::from_columns(&[r * x1, -x2]);
    let ata: Matrix2<f64> = a.transpose() * a;
    let sol = ata.try_inverse()? * (a.transpose() * (-t));
    Some((sol.x, sol.y))
}

/// Picks the `(R, t)` of the four candidates that puts the most pairs in
/// front of both cameras. Only pairs flagged in `mask` are considered.
pub fn decompose_essential(
    e: &EssentialMatrix,
    pairs: &[(Vector2<f64>, Vector2<f64>)],
    mask: Option<&[bool]>,
    k: &CameraIntrinsics,
) -> Result<Decomposition, VoError> {
    let pts: Vec<(Vector3<f64>, Vector3<f64>)> = pairs
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, p)| (k.normalize(p.0).push(1.0), k.normalize(p.1).push(1.0)))
        .collect();
    if pts.is_empty() {
        return Err(VoError::Insufficient("decomposition needs at least one inlier".into()));
    }
    let svd = e.e.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut vt = svd.v_t.unwrap();
    // nalgebra does not sort singular values; move the smallest to the end.
    let sv = svd.singular_values;
    let imin = sv.imin();
    if imin != 2 {
        u.swap_columns(imin, 2);
        vt.swap_rows(imin, 2);
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if vt.determinant() < 0.0 {
        vt.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let u3: Vector3<f64> = u.column(2).into();
    let candidates = [
        (u * w * vt, u3),
        (u * w * vt, -u3),
        (u * w.transpose() * vt, u3),
        (u * w.transpose() * vt, -u3),
    ];
    let mut best = (0usize, 0usize);
    for (ci, (r, t)) in candidates.iter().enumerate() {
        let support = pts
            .iter()
            .filter(|(x1, x2)| {
                triangulate_depths(r, t, x1, x2).is_some_and(|(l1, l2)| {
                    l1 > 0.0 && l2 > 0.0 && l1 < MAX_DEPTH_RATIO && l2 < MAX_DEPTH_RATIO
                })
            })
            .count();
        if support > best.1 {
            best = (ci, support);
        }
    }
    let (r, t) = candidates[best.0];
    Ok(Decomposition {
        pose: PoseSE3 {
            r: super::orthonormalize(&r),
            t: t.normalize(),
        },
        support: best.1,
        considered: pts.len(),
        cheirality_failure: 2 * best.1 < pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odometry::{rotation_angle, yaw_rotation};
    use crate::seeded_rng;
    use nalgebra::Rotation3;
    use rand::Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 256.0, 192.0).unwrap()
    }

    fn pose(seed: u64) -> PoseSE3 {
        let mut rng = seeded_rng(seed);
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let r = Rotation3::new(axis * 0.1).into_inner();
        let t = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.5..1.0));
        PoseSE3 { r, t }
    }

    fn synth(p: &PoseSE3, n: usize, seed: u64) -> Vec<(Vector2<f64>, Vector2<f64>)> {
        let mut rng = seeded_rng(seed);
        let mut out = Vec::new();
        while out.len() < n {
            let x = Vector3::new(rng.random_range(-6.0..6.0), rng.random_range(-4.0..4.0), rng.random_range(4.0..30.0));
            let y = p.apply(&x);
            if let (Some(a), Some(b)) = (k().project(&x), k().project(&y)) {
                out.push((a, b));
            }
        }
        out
    }

    fn dir_err(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        (a.normalize().dot(&b.normalize())).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn sampson_zero_on_exact_pairs() {
        let p = pose(1);
        let e = EssentialMatrix::from_pose(&p).e;
        for (a, b) in synth(&p, 50, 2) {
            assert!(sampson_distance(&e, &k().normalize(a), &k().normalize(b)) < 1e-12);
        }
    }

    #[test]
    fn enforce_gives_unit_unit_zero() {
        let mut rng = seeded_rng(3);
        let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let s = enforce_essential(&m).singular_values();
        let mut v: Vec<f64> = s.iter().copied().collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((v[0] - 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9 && v[2].abs() < 1e-9);
    }

    #[test]
    fn recovers_known_pose() {
        for seed in 0..10 {
            let p = pose(seed);
            let pairs = synth(&p, 100, seed + 100);
            let est = estimate_essential_ransac(&pairs, &k(), &RansacConfig::default(), &mut seeded_rng(seed)).unwrap();
            assert!(!est.degenerate);
            assert_eq!(est.inlier_count(), 100);
            let gt = EssentialMatrix::from_pose(&p).canonical();
            assert!((est.essential.canonical() - gt).norm() < 1e-6, "seed {seed}");
            let d = decompose_essential(&est.essential, &pairs, Some(&est.inliers), &k()).unwrap();
            assert!(!d.cheirality_failure);
            assert!(d.pose.is_valid(1e-9));
            assert!(rotation_angle(&(d.pose.r.transpose() * p.r)) < 1e-6, "seed {seed}");
            assert!(dir_err(&d.pose.t, &p.t) < 1e-6, "seed {seed}");
            assert!((d.pose.t.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_from_exact_e() {
        let p = PoseSE3 {
            r: yaw_rotation(0.05),
            t: Vector3::new(0.1, 0.0, -1.0),
        };
        let pairs = synth(&p, 40, 9);
        let d = decompose_essential(&EssentialMatrix::from_pose(&p), &pairs, None, &k()).unwrap();
        assert!(rotation_angle(&(d.pose.r.transpose() * p.r)) < 1e-9);
        assert!(dir_err(&d.pose.t, &p.t) < 1e-9);
        assert_eq!(d.support, 40);
    }

    #[test]
    fn seven_pairs_is_an_error() {
        let pairs = synth(&pose(4), 7, 5);
        assert!(estimate_essential_ransac(&pairs, &k(), &RansacConfig::default(), &mut seeded_rng(0)).is_err());
    }

    // Outliers are injected on top of the clean set at 60% of its size. With
    // 60% of all pairs corrupted, 500 eight-point samples contain an
    // all-inlier draw only 1 - (1 - 0.4^8)^500 ≈ 28% of the time.
    #[test]
    fn gross_outliers_are_rejected() {
        let p = pose(6);
        let mut rng = seeded_rng(7);
        let clean = 150;
        let mut pairs = synth(&p, clean, 8);
        let mut truth = vec![true; clean];
        for _ in 0..(clean * 6 / 10) {
            let a = Vector2::new(rng.random_range(0.0..512.0), rng.random_range(0.0..384.0));
            let b = Vector2::new(rng.random_range(0.0..512.0), rng.random_range(0.0..384.0));
            pairs.push((a, b));
            truth.push(false);
        }
        for seed in 0..5 {
            let est = estimate_essential_ransac(&pairs, &k(), &RansacConfig::default(), &mut seeded_rng(seed)).unwrap();
            let recovered = (0..pairs.len()).filter(|&i| truth[i] && est.inliers[i]).count();
            assert!(recovered as f64 >= 0.95 * clean as f64, "{recovered}/{clean}");
            let false_pos = (0..pairs.len()).filter(|&i| !truth[i] && est.inliers[i]).count();
            assert!(false_pos < 5, "{false_pos}");
        }
    }

    #[test]
    fn pure_rotation_fails_cheirality() {
        let mut rng = seeded_rng(11);
        let p = PoseSE3 {
            r: yaw_rotation(0.08),
            t: Vector3::new(1e-9, -1e-9, 1e-9),
        };
        let mut pairs = synth(&p, 150, 12);
        for pr in &mut pairs {
            pr.1 += Vector2::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
        }
        let est = estimate_essential_ransac(&pairs, &k(), &RansacConfig::default(), &mut seeded_rng(2)).unwrap();
        let d = decompose_essential(&est.essential, &pairs, Some(&est.inliers), &k()).unwrap();
        assert!(d.cheirality_failure, "support {}/{}", d.support, d.considered);
    }
}
