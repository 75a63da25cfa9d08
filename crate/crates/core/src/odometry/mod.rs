//! Monocular visual odometry: pyramidal KLT tracking, eight-point RANSAC on
//! the essential matrix, cheirality-checked decomposition, ground-truth
//! scaling, and the trajectory-error metrics used to compare detectors.

mod epipolar;
mod klt;
mod sweep;
mod vo;

pub use epipolar::{
    decompose_essential, eight_point, enforce_essential, estimate_essential_ransac, sampson_distance,
    Decomposition, EssentialEstimate, EssentialMatrix, RansacConfig,
};
pub use klt::{klt_track, KltConfig, Pyramid, Track};
pub use epipolar::MAX_DEPTH_RATIO;
pub use sweep::{noise_sweep, ratio_table, write_sweep_csv, RatioRow, SweepCell, SweepConfig, SweepRow};
pub use vo::{run_vo, NoiseSpec, VoConfig, VoReport};

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VoError {
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("length mismatch: estimate has {est} positions, ground truth {gt}")]
    LengthMismatch { est: usize, gt: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] crate::imaging::ImageError),
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, VoError> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(VoError::Argument(format!("focal lengths must be positive, got {fx}, {fy}")));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, p: Vector2<f64>) -> Vector2<f64> {
        Vector2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    /// Camera-frame point to pixel; `None` behind the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<Vector2<f64>> {
        (x.z > 0.0).then(|| Vector2::new(self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Rigid transform `x' = R x + t`.
///
/// Camera poses in a sequence are camera-to-world (the KITTI convention), so
/// `t` is the camera centre. Relative motions between frames map frame-`k`
/// camera coordinates into frame `k+1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        (self.r.transpose() * self.r - Matrix3::identity()).abs().max() <= tol
            && (self.r.determinant() - 1.0).abs() <= tol
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r.transpose();
        Self { r: rt, t: -(rt * self.t) }
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            r: self.r * other.r,
            t: self.r * other.t + self.t,
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }
}

/// Nearest rotation in the Frobenius sense.
pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * vt;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * vt;
    }
    out
}

/// Rotation about the camera's vertical (y) axis.
pub fn yaw_rotation(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Angle of a rotation matrix, radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Camera positions, one per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Vector3<f64>>,
}

impl Trajectory {
    pub fn new(positions: Vec<Vector3<f64>>) -> Self {
        Self { positions }
    }

    pub fn from_poses(poses: &[PoseSE3]) -> Self {
        Self::new(poses.iter().map(|p| p.t).collect())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Sum of step lengths.
    pub fn path_length(&self) -> f64 {
        self.positions.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// `frame,x,y,z` with full round-trip precision.
    pub fn write_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["frame", "x", "y", "z"])?;
        for (i, p) in self.positions.iter().enumerate() {
            w.write_record([i.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self, String> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header = r.headers().map_err(|e| e.to_string())?.clone();
        if header.iter().collect::<Vec<_>>() != ["frame", "x", "y", "z"] {
            return Err(format!("expected header frame,x,y,z, got {}", header.iter().collect::<Vec<_>>().join(",")));
        }
        let mut positions = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let num = |j: usize| -> Result<f64, String> {
                rec.get(j)
                    .ok_or_else(|| format!("row {}: missing column {j}", i + 1))?
                    .trim()
                    .parse()
                    .map_err(|e| format!("row {}: {e}", i + 1))
            };
            if num(0)? as usize != i {
                return Err(format!("row {}: frames must be numbered from 0 consecutively", i + 1));
            }
            positions.push(Vector3::new(num(1)?, num(2)?, num(3)?));
        }
        Ok(Self::new(positions))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), VoError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| VoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| VoError::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, VoError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| VoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv(file).map_err(|reason| VoError::Parse {
            path: path.to_path_buf(),
            reason,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Mean squared Euclidean error.
    Mse,
    /// Mean Euclidean error.
    Mee,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mse" => Ok(Metric::Mse),
            "mee" => Ok(Metric::Mee),
            other => Err(format!("unknown metric {other:?} (expected mse or mee)")),
        }
    }
}

pub fn trajectory_error(est: &Trajectory, gt: &Trajectory, metric: Metric) -> Result<f64, VoError> {
    if est.len() != gt.len() {
        return Err(VoError::LengthMismatch {
            est: est.len(),
            gt: gt.len(),
        });
    }
    if est.is_empty() {
        return Err(VoError::Insufficient("empty trajectories".into()));
    }
    let errs = est.positions.iter().zip(&gt.positions).map(|(a, b)| (a - b).norm());
    let n = est.len() as f64;
    Ok(match metric {
        Metric::Mse => errs.map(|e| e * e).sum::<f64>() / n,
        Metric::Mee => errs.sum::<f64>() / n,
    })
}
