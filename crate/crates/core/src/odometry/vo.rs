use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use serde::Serialize;

use super::{
    decompose_essential, estimate_essential_ransac, klt_track, orthonormalize, CameraIntrinsics, KltConfig, PoseSE3,
    Pyramid, RansacConfig, Trajectory, VoError,
};
use crate::features::{regulate, Detector, FastConfig, ThresholdMode};
use crate::imaging::{add_gaussian_noise, GreyImage, NoiseWalkState};
use crate::{derive_seed, seeded_rng};

/// Sensor noise injected into every frame before detection and tracking.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    #[default]
    None,
    /// Constant standard deviation.
    Static { sigma: f64 },
    /// Bounded random walk on the standard deviation, starting at 0.
    Walk { limit: f64 },
}

impl NoiseSpec {
    /// Scalar used to label sweep rows.
    pub fn level(&self) -> f64 {
        match *self {
            NoiseSpec::None => 0.0,
            NoiseSpec::Static { sigma } => sigma,
            NoiseSpec::Walk { limit } => limit,
        }
    }

    /// Per-frame standard deviations for a sequence of `n` frames.
    pub fn sigmas(&self, n: usize, seed: u64) -> Result<Vec<f64>, VoError> {
        Ok(match *self {
            NoiseSpec::None => vec![0.0; n],
            NoiseSpec::Static { sigma } => {
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(VoError::Argument(format!("noise sigma must be non-negative, got {sigma}")));
                }
                vec![sigma; n]
            }
            NoiseSpec::Walk { limit } => {
                let mut walk = NoiseWalkState::new(limit, derive_seed(seed, &[STREAM_WALK]))?;
                (0..n)
                    .map(|_| {
                        let s = walk.sigma();
                        walk = walk.clone().advance();
                        s
                    })
                    .collect()
            }
        })
    }
}

const STREAM_NOISE: u64 = 1;
const STREAM_RANSAC: u64 = 2;
const STREAM_SUBSAMPLE: u64 = 3;
const STREAM_WALK: u64 = 4;

#[derive(Debug, Clone)]
pub struct VoConfig {
    pub detector: Detector,
    /// Regulate the detector threshold frame to frame.
    pub dynamic: bool,
    pub threshold_mode: ThresholdMode,
    pub noise: NoiseSpec,
    pub klt: KltConfig,
    pub ransac: RansacConfig,
    /// Detected keypoints beyond this are randomly subsampled before tracking.
    pub max_tracked: usize,
    pub seed: u64,
}

impl Default for VoConfig {
    fn default() -> Self {
        Self {
            detector: Detector::Fast(FastConfig::default()),
            dynamic: false,
            threshold_mode: ThresholdMode::default(),
            noise: NoiseSpec::None,
            klt: KltConfig::default(),
            ransac: RansacConfig::default(),
            max_tracked: 150,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoReport {
    pub trajectory: Trajectory,
    /// Keypoints detected on each frame that starts a step.
    pub keypoint_counts: Vec<usize>,
    /// Threshold used on each of those frames.
    pub thresholds: Vec<f64>,
    pub tracked: Vec<usize>,
    pub inlier_ratios: Vec<f64>,
    /// Steps that fell back to the previous motion.
    pub degenerate: Vec<bool>,
    pub degenerate_frames: usize,
}

/// Runs monocular VO over `frames`, taking per-step scale from `gt`.
///
/// The estimate starts at `gt[0]` with identity orientation. On a degenerate
/// step (too few tracks, low inlier ratio, cheirality failure) the previous
/// relative motion is reused; before any motion is known that is a unit step
/// along the optical axis.
pub fn run_vo(frames: &[GreyImage], gt: &Trajectory, k: &CameraIntrinsics, cfg: &VoConfig) -> Result<VoReport, VoError> {
    let n = frames.len();
    if n < 2 {
        return Err(VoError::Insufficient(format!("VO needs at least 2 frames, got {n}")));
    }
    if gt.len() != n {
        return Err(VoError::LengthMismatch { est: n, gt: gt.len() });
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    if let Some(f) = frames.iter().find(|f| (f.width(), f.height()) != (w, h)) {
        return Err(VoError::Argument(format!(
            "frame sizes differ: {w}x{h} and {}x{}",
            f.width(),
            f.height()
        )));
    }
    let sigmas = cfg.noise.sigmas(n, cfg.seed)?;
    let corrupt = |i: usize| -> Result<GreyImage, VoError> {
        let mut rng = seeded_rng(derive_seed(cfg.seed, &[STREAM_NOISE, i as u64]));
        Ok(add_gaussian_noise(&frames[i], sigmas[i], &mut rng)?)
    };
    let mut ransac_rng = seeded_rng(derive_seed(cfg.seed, &[STREAM_RANSAC]));
    let mut sub_rng = seeded_rng(derive_seed(cfg.seed, &[STREAM_SUBSAMPLE]));

    let mut state = cfg.detector.threshold_state();
    state.validate().map_err(|e| VoError::Argument(e.to_string()))?;
    let fixed_threshold = state.threshold;

    let mut rot = Matrix3::identity();
    let mut pos = gt.positions[0];
    let mut positions = vec![pos];
    let mut motion = PoseSE3 {
        r: Matrix3::identity(),
        t: Vector3::new(0.0, 0.0, -1.0),
    };
    let mut report = VoReport {
        trajectory: Trajectory::new(Vec::new()),
        keypoint_counts: Vec::with_capacity(n - 1),
        thresholds: Vec::with_capacity(n - 1),
        tracked: Vec::with_capacity(n - 1),
        inlier_ratios: Vec::with_capacity(n - 1),
        degenerate: Vec::with_capacity(n - 1),
        degenerate_frames: 0,
    };

    let mut cur = corrupt(0)?;
    let mut cur_pyr = Pyramid::new(&cur, cfg.klt.levels);
    for i in 0..n - 1 {
        let next = corrupt(i + 1)?;
        let next_pyr = Pyramid::new(&next, cfg.klt.levels);

        let kps = if cfg.dynamic {
            report.thresholds.push(state.threshold);
            let (kps, s) = regulate(&cfg.detector, &cur, state, cfg.threshold_mode);
            state = s;
            kps
        } else {
            report.thresholds.push(fixed_threshold);
            cfg.detector.detect(&cur, fixed_threshold)
        };
        report.keypoint_counts.push(kps.len());

        let scale = (gt.positions[i + 1] - gt.positions[i]).norm();
        let mut degenerate = false;
        let mut tracked = 0;
        let mut inlier_ratio = 0.0;
        if scale > 0.0 {
            let mut chosen: Vec<usize> = if kps.len() > cfg.max_tracked {
                sample(&mut sub_rng, kps.len(), cfg.max_tracked).into_vec()
            } else {
                (0..kps.len()).collect()
            };
            chosen.sort_unstable();
            let pts: Vec<Vector2<f64>> = chosen
                .iter()
                .map(|&j| Vector2::new(kps[j].x as f64, kps[j].y as f64))
                .collect();
            let pairs: Vec<(Vector2<f64>, Vector2<f64>)> = pts
                .iter()
                .zip(klt_track(&cur_pyr, &next_pyr, &pts, &cfg.klt))
                .filter_map(|(p, t)| t.map(|q| (*p, q)))
                .collect();
            tracked = pairs.len();
            let estimate = if pairs.len() >= 8 {
                estimate_essential_ransac(&pairs, k, &cfg.ransac, &mut ransac_rng).ok()
            } else {
                None
            };
            let step = estimate.and_then(|est| {
                inlier_ratio = est.inlier_ratio;
                if est.degenerate {
                    return None;
                }
                let d = decompose_essential(&est.essential, &pairs, Some(&est.inliers), k).ok()?;
                (!d.cheirality_failure).then_some(d.pose)
            });
            match step {
                Some(m) => motion = m,
                None => degenerate = true,
            }
            // X_{k+1} = R X_k + t  =>  camera k+1 sits at C_k - s R_wk Rᵀ t in the world.
            let rt = motion.r.transpose();
            pos -= scale * (rot * rt * motion.t);
            rot = orthonormalize(&(rot * rt));
        }
        positions.push(pos);
        report.tracked.push(tracked);
        report.inlier_ratios.push(inlier_ratio);
        report.degenerate.push(degenerate);
        report.degenerate_frames += degenerate as usize;
        cur = next;
        cur_pyr = next_pyr;
    }
    report.trajectory = Trajectory::new(positions);
    Ok(report)
}
