use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use super::mlp::{train_dynamics, TrainConfig};
use super::{collect_episodes, collect_rollout, kmeans_filter, random_policy, LocoError, TransitionDataset};
use crate::{derive_seed, seeded_rng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig4Config {
    pub sizes: Vec<usize>,
    /// Models trained per cell.
    pub models: usize,
    pub train: TrainConfig,
    pub master_seed: u64,
    pub jobs: usize,
}

impl Default for Fig4Config {
    fn default() -> Self {
        Self {
            sizes: vec![500, 1000, 2000],
            models: 25,
            train: TrainConfig::default(),
            master_seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig4Row {
    pub size: usize,
    /// `kmeans`, `random` or `full`.
    pub condition: &'static str,
    pub mean_val_mse: f64,
    /// Sample standard deviation over the models; 0 for a single model.
    pub std_val_mse: f64,
    pub models: usize,
}

/// Episode length cap for the training pool.
pub const POOL_EPISODE: usize = 50;

/// A training pool of short random-policy episodes and a validation set of
/// full-length ones. The pool is dense near the start states while the
/// validation set covers the whole flight envelope the random policy reaches.
pub fn fig4_data(
    pool_size: usize,
    val_size: usize,
    seed: u64,
) -> Result<(TransitionDataset, TransitionDataset), LocoError> {
    let pool = collect_episodes(random_policy, pool_size, POOL_EPISODE, &mut seeded_rng(derive_seed(seed, &[1])))?;
    let val = collect_rollout(random_policy, val_size, &mut seeded_rng(derive_seed(seed, &[2])))?;
    Ok((pool, val))
}

pub const CONDITIONS: [&str; 3] = ["kmeans", "random", "full"];

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Validation MSE of `models` networks per dataset size on a k-means subset, a
/// uniform random subset of the same size, and the full `master` set. Model
/// `m` uses the same initialization seed in every cell. The full-data cell
/// does not depend on size and is trained once.
pub fn fig4_sweep(
    master: &TransitionDataset,
    val: &TransitionDataset,
    cfg: &Fig4Config,
) -> Result<Vec<Fig4Row>, LocoError> {
    if cfg.models == 0 || cfg.sizes.is_empty() {
        return Err(LocoError::Argument("need at least one size and one model".into()));
    }
    if let Some(&s) = cfg.sizes.iter().find(|&&s| s == 0 || s > master.len()) {
        return Err(LocoError::Argument(format!(
            "size {s} outside 1..={} (master dataset)",
            master.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| LocoError::Argument(e.to_string()))?;

    // subsets[size][0] = k-means, [1] = random
    let subsets: Vec<[TransitionDataset; 2]> = pool.install(|| {
        cfg.sizes
            .par_iter()
            .map(|&size| {
                let mut krng = seeded_rng(derive_seed(cfg.master_seed, &[size as u64, 1]));
                let (km, _, _) = kmeans_filter(master, size, &mut krng)?;
                let mut rrng = seeded_rng(derive_seed(cfg.master_seed, &[size as u64, 2]));
                let mut idx = sample(&mut rrng, master.len(), size).into_vec();
                idx.sort_unstable();
                Ok([km, master.select(&idx)])
            })
            .collect::<Result<_, LocoError>>()
    })?;

    // (dataset, model) cells: full data first, then each size's two subsets.
    let mut sets: Vec<&TransitionDataset> = vec![master];
    for s in &subsets {
        sets.extend(s.iter());
    }
    let cells: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|d| (0..cfg.models).map(move |m| (d, m)))
        .collect();
    let scores: Vec<f64> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(d, m)| {
                let seed = derive_seed(cfg.master_seed, &[u64::MAX, m as u64]);
                train_dynamics(sets[d], val, seed, &cfg.train).map(|r| r.1)
            })
            .collect::<Result<_, LocoError>>()
    })?;
    let per_set = |d: usize| &scores[d * cfg.models..(d + 1) * cfg.models];

    let mut rows = Vec::with_capacity(cfg.sizes.len() * 3);
    for (i, &size) in cfg.sizes.iter().enumerate() {
        for (c, name) in CONDITIONS.iter().enumerate() {
            let d = if c == 2 { 0 } else { 1 + 2 * i + c };
            let (mean, std) = mean_std(per_set(d));
            rows.push(Fig4Row {
                size,
                condition: name,
                mean_val_mse: mean,
                std_val_mse: std,
                models: cfg.models,
            });
        }
    }
    Ok(rows)
}

pub fn write_fig4_csv(rows: &[Fig4Row], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
