use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};

use super::{project_point, Scene, SceneError};
use crate::imaging::{load_pgm, save_pgm, GreyImage};
use crate::odometry::{CameraIntrinsics, PoseSE3, Trajectory};

/// Tolerance on `RᵀR = I` for loaded poses.
const ROTATION_TOL: f64 = 1e-4;

/// A sequence directory in KITTI odometry layout with PGM frames.
#[derive(Debug, Clone)]
pub struct KittiSequence {
    pub frame_paths: Vec<PathBuf>,
    pub poses: Vec<PoseSE3>,
    pub intrinsics: CameraIntrinsics,
    /// World points from `points.txt`, present for exported synthetic scenes.
    pub points: Option<Vec<Vector3<f64>>>,
}

impl KittiSequence {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory::from_poses(&self.poses)
    }

    /// Re-projects `points` into every frame, as in [`Scene::observations`].
    pub fn observations(&self, near: f64, width: usize, height: usize) -> Option<Vec<Vec<Option<Vector2<f64>>>>> {
        let pts = self.points.as_ref()?;
        Some(
            self.poses
                .iter()
                .map(|pose| {
                    pts.iter()
                        .map(|x| project_point(pose, &self.intrinsics, x, near, width, height))
                        .collect()
                })
                .collect(),
        )
    }

    pub fn load_frames(&self) -> Result<Vec<GreyImage>, SceneError> {
        self.frame_paths.iter().map(|p| Ok(load_pgm(p)?)).collect()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_numbers(path: &Path, line: usize, text: &str) -> Result<Vec<f64>, SceneError> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| SceneError::Parse {
                path: path.to_path_buf(),
                line,
                reason: format!("{t:?}: {e}"),
            })
        })
        .collect()
}

/// Parses `poses.txt`: one row-major 3x4 `[R | t]` per non-empty line.
pub fn parse_poses(path: &Path, text: &str) -> Result<Vec<PoseSE3>, SceneError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_numbers(path, i + 1, line)?;
        if v.len() != 12 {
            return Err(SceneError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("expected 12 numbers, found {}", v.len()),
            });
        }
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let pose = PoseSE3 {
            r,
            t: Vector3::new(v[3], v[7], v[11]),
        };
        if !pose.is_valid(ROTATION_TOL) {
            return Err(SceneError::Validation {
                path: path.to_path_buf(),
                reason: format!("line {}: rotation is not orthonormal within {ROTATION_TOL}", i + 1),
            });
        }
        out.push(pose);
    }
    Ok(out)
}

/// Reads intrinsics from the `P0:` projection line (or the first `P<n>:` line).
pub fn parse_calib(path: &Path, text: &str) -> Result<CameraIntrinsics, SceneError> {
    let lines: Vec<(usize, &str, &str)> = text
        .lines()
        .enumerate()
        .filter_map(|(i, l)| l.split_once(':').map(|(k, v)| (i + 1, k.trim(), v)))
        .filter(|(_, k, _)| k.starts_with('P'))
        .collect();
    let (line, _, values) = lines
        .iter()
        .find(|(_, k, _)| *k == "P0")
        .or_else(|| lines.first())
        .copied()
        .ok_or_else(|| SceneError::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: "no projection line (P0: ...)".into(),
        })?;
    let v = parse_numbers(path, line, values)?;
    if v.len() != 12 {
        return Err(SceneError::Parse {
            path: path.to_path_buf(),
            line,
            reason: format!("projection line needs 12 numbers, found {}", v.len()),
        });
    }
    CameraIntrinsics::new(v[0], v[5], v[2], v[6]).map_err(|e| SceneError::Validation {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

// `image_0` if present, otherwise the only subdirectory holding PGMs.
fn image_dir(dir: &Path) -> Result<PathBuf, SceneError> {
    let preferred = dir.join("image_0");
    if preferred.is_dir() {
        return Ok(preferred);
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if p.is_dir() && !pgm_files(&p)?.is_empty() {
            found.push(p);
        }
    }
    found.sort();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => Err(SceneError::Validation {
            path: dir.to_path_buf(),
            reason: "no image subdirectory with PGM frames".into(),
        }),
        _ => Err(SceneError::Validation {
            path: dir.to_path_buf(),
            reason: "several image subdirectories and no image_0".into(),
        }),
    }
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>, SceneError> {
    let mut v = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            v.push(p);
        }
    }
    v.sort();
    Ok(v)
}

pub fn load_kitti(dir: impl AsRef<Path>) -> Result<KittiSequence, SceneError> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(SceneError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "sequence directory not found"),
        });
    }
    let frame_paths = pgm_files(&image_dir(dir)?)?;
    let poses_path = dir.join("poses.txt");
    let poses = parse_poses(&poses_path, &std::fs::read_to_string(&poses_path).map_err(io_err(&poses_path))?)?;
    let calib_path = dir.join("calib.txt");
    let intrinsics = parse_calib(&calib_path, &std::fs::read_to_string(&calib_path).map_err(io_err(&calib_path))?)?;
    if poses.len() != frame_paths.len() {
        return Err(SceneError::Validation {
            path: dir.to_path_buf(),
            reason: format!("{} poses for {} frames", poses.len(), frame_paths.len()),
        });
    }
    let points_path = dir.join("points.txt");
    let points = if points_path.is_file() {
        let text = std::fs::read_to_string(&points_path).map_err(io_err(&points_path))?;
        Some(parse_points(&points_path, &text)?)
    } else {
        None
    };
    Ok(KittiSequence {
        frame_paths,
        poses,
        intrinsics,
        points,
    })
}

/// Parses `points.txt`: one `x y z` world point per non-empty line.
pub fn parse_points(path: &Path, text: &str) -> Result<Vec<Vector3<f64>>, SceneError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_numbers(path, i + 1, line)?;
        if v.len() != 3 {
            return Err(SceneError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("expected 3 numbers, found {}", v.len()),
            });
        }
        out.push(Vector3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

/// Twelve numbers of a row-major `[R | t]`, each in shortest round-trip form.
pub fn format_pose_line(p: &PoseSE3) -> String {
    let mut s = String::new();
    for i in 0..3 {
        for j in 0..3 {
            write!(s, "{:e} ", p.r[(i, j)]).unwrap();
        }
        write!(s, "{:e}", p.t[i]).unwrap();
        if i < 2 {
            s.push(' ');
        }
    }
    s
}

/// Writes `image_0/NNNNNN.pgm`, `poses.txt`, `calib.txt` and the world points
/// in `points.txt`.
pub fn export_kitti(scene: &Scene, dir: impl AsRef<Path>) -> Result<(), SceneError> {
    let dir = dir.as_ref();
    export_frames(&scene.frames, &scene.poses, &scene.intrinsics, dir)?;
    let path = dir.join("points.txt");
    let text: String = scene
        .points
        .iter()
        .map(|p| format!("{:e} {:e} {:e}\n", p.x, p.y, p.z))
        .collect();
    std::fs::write(&path, text).map_err(io_err(&path))
}

/// Writes frames, poses and calibration only.
pub fn export_frames(
    frames: &[GreyImage],
    poses: &[PoseSE3],
    k: &CameraIntrinsics,
    dir: impl AsRef<Path>,
) -> Result<(), SceneError> {
    let dir = dir.as_ref();
    let img_dir = dir.join("image_0");
    std::fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    for (i, f) in frames.iter().enumerate() {
        save_pgm(f, img_dir.join(format!("{i:06}.pgm")))?;
    }
    let poses_path = dir.join("poses.txt");
    let text: String = poses.iter().map(|p| format_pose_line(p) + "\n").collect();
    std::fs::write(&poses_path, text).map_err(io_err(&poses_path))?;
    let calib_path = dir.join("calib.txt");
    let calib = format!(
        "P0: {:e} 0e0 {:e} 0e0 0e0 {:e} {:e} 0e0 0e0 0e0 1e0 0e0\n",
        k.fx, k.cx, k.fy, k.cy
    );
    std::fs::write(&calib_path, calib).map_err(io_err(&calib_path))?;
    Ok(())
}
