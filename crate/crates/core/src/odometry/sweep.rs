use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{run_vo, trajectory_error, CameraIntrinsics, Metric, NoiseSpec, Trajectory, VoConfig, VoError};
use crate::derive_seed;
use crate::features::Detector;
use crate::imaging::GreyImage;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub sequence: String,
    pub detectors: Vec<Detector>,
    pub noise: Vec<NoiseSpec>,
    pub seeds: usize,
    pub master_seed: u64,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
    /// Tracker, RANSAC and subsampling settings shared by every cell.
    pub base: VoConfig,
}

/// One `(noise level, seed, detector, dynamic)` run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SweepCell {
    pub noise_index: usize,
    pub seed_index: usize,
    pub detector_index: usize,
    pub dynamic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sequence: String,
    pub detector: String,
    pub dynamic: bool,
    pub noise: f64,
    pub seed: usize,
    pub mse: f64,
    pub mee: f64,
    pub degenerate_frames: usize,
}

/// Runs every cell of the grid. Fixed and dynamic runs of the same
/// `(noise, seed)` see identical noise. Rows come back sorted by noise level,
/// seed, detector, then fixed before dynamic.
pub fn noise_sweep(
    frames: &[GreyImage],
    gt: &Trajectory,
    k: &CameraIntrinsics,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>, VoError> {
    if cfg.detectors.is_empty() || cfg.noise.is_empty() || cfg.seeds == 0 {
        return Err(VoError::Argument("sweep grid is empty".into()));
    }
    let mut cells = Vec::new();
    for noise_index in 0..cfg.noise.len() {
        for seed_index in 0..cfg.seeds {
            for detector_index in 0..cfg.detectors.len() {
                for dynamic in [false, true] {
                    cells.push(SweepCell {
                        noise_index,
                        seed_index,
                        detector_index,
                        dynamic,
                    });
                }
            }
        }
    }
    let run_cell = |c: &SweepCell| -> Result<(SweepCell, SweepRow), VoError> {
        let noise = cfg.noise[c.noise_index];
        let vo = VoConfig {
            detector: cfg.detectors[c.detector_index].clone(),
            dynamic: c.dynamic,
            noise,
            seed: derive_seed(cfg.master_seed, &[noise.level().to_bits(), c.seed_index as u64]),
            ..cfg.base.clone()
        };
        let rep = run_vo(frames, gt, k, &vo)?;
        Ok((
            *c,
            SweepRow {
                sequence: cfg.sequence.clone(),
                detector: vo.detector.name().to_string(),
                dynamic: c.dynamic,
                noise: noise.level(),
                seed: c.seed_index,
                mse: trajectory_error(&rep.trajectory, gt, Metric::Mse)?,
                mee: trajectory_error(&rep.trajectory, gt, Metric::Mee)?,
                degenerate_frames: rep.degenerate_frames,
            },
        ))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| VoError::Argument(e.to_string()))?;
    let mut results = pool.install(|| cells.par_iter().map(run_cell).collect::<Result<Vec<_>, _>>())?;
    results.sort_by_key(|a| a.0);
    Ok(results.into_iter().map(|(_, r)| r).collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-threshold error over dynamic-threshold error, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub detector: String,
    pub noise: f64,
    pub ratio_mse: f64,
    pub ratio_mee: f64,
    pub n_seeds: usize,
}

/// Aggregates sweep rows per `(detector, noise)`, in first-seen order.
pub fn ratio_table(rows: &[SweepRow]) -> Vec<RatioRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(d, n)| *d == r.detector && *n == r.noise) {
            keys.push((r.detector.clone(), r.noise));
        }
    }
    keys.into_iter()
        .map(|(det, noise)| {
            let sel = |dynamic: bool| -> Vec<&SweepRow> {
                rows.iter()
                    .filter(|r| r.detector == det && r.noise == noise && r.dynamic == dynamic)
                    .collect()
            };
            let (fixed, dynamic) = (sel(false), sel(true));
            let mean = |v: &[&SweepRow], f: fn(&SweepRow) -> f64| v.iter().map(|r| f(r)).sum::<f64>() / v.len().max(1) as f64;
            RatioRow {
                detector: det.clone(),
                noise,
                ratio_mse: mean(&fixed, |r| r.mse) / mean(&dynamic, |r| r.mse),
                ratio_mee: mean(&fixed, |r| r.mee) / mean(&dynamic, |r| r.mee),
                n_seeds: fixed.len().min(dynamic.len()),
            }
        })
        .collect()
}
