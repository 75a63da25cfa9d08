//! Model-based RL for attitude control: a simulated quadrotor, k-means
//! dataset filtering, an MLP dynamics model, and random-shooting MPC.
//!
//! State layout: `[roll, pitch, roll_rate, pitch_rate, yaw_rate, accel_z]`
//! (radians, rad/s, m/s²). Actions are four motor commands in `[0, 1]` in quad
//! X order: front-left, rear-left, rear-right, front-right.

mod fig4;
mod kmeans;
mod mbrl;
mod mlp;

pub use fig4::{fig4_data, fig4_sweep, write_fig4_csv, Fig4Config, Fig4Row, CONDITIONS, POOL_EPISODE};
pub use kmeans::{kmeans, kmeans_filter, KMeansResult};
pub use mbrl::{
    evaluate_policy, mbrl_iteration, mpc_action, mpc_plan, random_action, random_policy, EpisodeStats, MbrlConfig,
    MbrlMetrics, MpcConfig, MpcPlan, TransitionModel, TrueDynamics,
};
pub use mlp::{fit_mlp, train_dynamics, validation_mse, DynamicsModel, Mlp, TrainConfig, MIN_TRAIN_SIZE};

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 4;

pub type State = [f64; STATE_DIM];
pub type Action = [f64; ACTION_DIM];

/// Integration step, seconds.
pub const DT: f64 = 0.01;
/// Standard deviation of the per-dimension observation noise.
pub const NOISE_STD: f64 = 0.01;
/// Angular acceleration per unit of roll or pitch command, rad/s².
pub const TORQUE_GAIN: f64 = 20.0;
/// Angular acceleration per unit of yaw command, rad/s².
pub const YAW_GAIN: f64 = 5.0;
/// Linear rate damping, 1/s.
pub const DAMPING: f64 = 0.5;
pub const GRAVITY: f64 = 9.81;
/// Roll or pitch magnitude that ends an episode.
pub const TILT_LIMIT: f64 = std::f64::consts::PI / 6.0;

/// Motor commands to normalized `(roll, pitch, yaw)` torques, each in `[-1, 1]`.
pub const MIXING: [[f64; ACTION_DIM]; 3] = [
    [0.5, 0.5, -0.5, -0.5],  // roll: left side up
    [0.5, -0.5, -0.5, 0.5],  // pitch: front up
    [0.5, -0.5, 0.5, -0.5],  // yaw: diagonal pairs
];

#[derive(Debug, Error)]
pub enum LocoError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-step reward: negative squared tilt.
pub fn reward(s: &State) -> f64 {
    -(s[0] * s[0] + s[1] * s[1])
}

/// Reward charged for every step lost to early termination.
pub fn terminal_reward() -> f64 {
    -2.0 * TILT_LIMIT * TILT_LIMIT
}

pub fn is_terminal(s: &State) -> bool {
    s[0].abs() > TILT_LIMIT || s[1].abs() > TILT_LIMIT
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: State,
    pub reward: f64,
    /// Tilt limit exceeded.
    pub done: bool,
}

/// Noise-free dynamics: one explicit Euler step.
pub fn dynamics(s: &State, a: &Action) -> State {
    let torque = |row: &[f64; ACTION_DIM]| row.iter().zip(a).map(|(m, u)| m * u).sum::<f64>();
    let (ur, up, uy) = (torque(&MIXING[0]), torque(&MIXING[1]), torque(&MIXING[2]));
    let [roll, pitch, p, q, r, _] = *s;
    let dp = TORQUE_GAIN * ur - DAMPING * p + 0.1 * q * r;
    let dq = TORQUE_GAIN * up - DAMPING * q - 0.1 * p * r;
    let dr = YAW_GAIN * uy - DAMPING * r;
    let mean_thrust = a.iter().sum::<f64>() / ACTION_DIM as f64;
    [
        roll + DT * p,
        pitch + DT * q,
        p + DT * dp,
        q + DT * dq,
        r + DT * dr,
        GRAVITY * (2.0 * mean_thrust - roll.cos() * pitch.cos()),
    ]
}

/// Simulator step with additive observation noise on every dimension.
pub fn env_step(s: &State, a: &Action, rng: &mut impl Rng) -> StepResult {
    let normal = Normal::new(0.0, NOISE_STD).expect("constant std");
    let mut next = dynamics(s, &clamp_action(a));
    for v in &mut next {
        *v += normal.sample(rng);
    }
    StepResult {
        reward: reward(&next),
        done: is_terminal(&next),
        state: next,
    }
}

pub fn clamp_action(a: &Action) -> Action {
    a.map(|u| u.clamp(0.0, 1.0))
}

/// Episode start: small random tilt and rates, level-flight acceleration.
pub fn reset_state(rng: &mut impl Rng) -> State {
    [
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        0.0,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: State,
    pub a: Action,
    pub s_next: State,
}

impl Transition {
    pub fn is_valid(&self) -> bool {
        self.s.iter().chain(&self.s_next).all(|v| v.is_finite()) && self.a.iter().all(|u| (0.0..=1.0).contains(u))
    }

    /// Model input: state followed by action.
    pub fn input(&self) -> [f64; STATE_DIM + ACTION_DIM] {
        let mut x = [0.0; STATE_DIM + ACTION_DIM];
        x[..STATE_DIM].copy_from_slice(&self.s);
        x[STATE_DIM..].copy_from_slice(&self.a);
        x
    }

    pub fn delta(&self) -> State {
        std::array::from_fn(|i| self.s_next[i] - self.s[i])
    }
}

/// Per-dimension mean and standard deviation, the latter floored at `1e-8`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Standardizer {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let rows: Vec<&[f64]> = rows.collect();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        Self {
            mean,
            std: var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect(),
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    /// Over the 10-dimensional `(s, a)` inputs.
    pub inputs: Standardizer,
    /// Over the 6-dimensional `s_next - s` targets.
    pub targets: Standardizer,
}

/// Transitions with normalization statistics kept in sync with the contents.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    transitions: Vec<Transition>,
    stats: DatasetStats,
}

impl TransitionDataset {
    pub fn new(transitions: Vec<Transition>) -> Self {
        let stats = Self::compute_stats(&transitions);
        Self { transitions, stats }
    }

    fn compute_stats(t: &[Transition]) -> DatasetStats {
        let inputs: Vec<[f64; 10]> = t.iter().map(Transition::input).collect();
        let targets: Vec<State> = t.iter().map(Transition::delta).collect();
        DatasetStats {
            inputs: Standardizer::fit(inputs.iter().map(|x| &x[..]), STATE_DIM + ACTION_DIM),
            targets: Standardizer::fit(targets.iter().map(|x| &x[..]), STATE_DIM),
        }
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn stats(&self) -> &DatasetStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn extend(&mut self, more: impl IntoIterator<Item = Transition>) {
        self.transitions.extend(more);
        self.stats = Self::compute_stats(&self.transitions);
    }

    /// Members at the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self::new(idx.iter().map(|&i| self.transitions[i]).collect())
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..STATE_DIM).map(|i| format!("s{i}")).collect();
        header.extend((0..ACTION_DIM).map(|i| format!("a{i}")));
        header.extend((0..STATE_DIM).map(|i| format!("sn{i}")));
        w.write_record(&header)?;
        for t in &self.transitions {
            w.write_record(t.s.iter().chain(&t.a).chain(&t.s_next).map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self, String> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header = r.headers().map_err(|e| e.to_string())?.clone();
        if header.len() != 16 || header.get(0) != Some("s0") || header.get(15) != Some("sn5") {
            return Err("expected header s0..s5,a0..a3,sn0..sn5".into());
        }
        let mut out = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("row {}: {e}", i + 1))?;
            if v.len() != 16 {
                return Err(format!("row {}: expected 16 fields", i + 1));
            }
            let t = Transition {
                s: v[0..6].try_into().unwrap(),
                a: v[6..10].try_into().unwrap(),
                s_next: v[10..16].try_into().unwrap(),
            };
            if !t.is_valid() {
                return Err(format!("row {}: non-finite value or action outside [0, 1]", i + 1));
            }
            out.push(t);
        }
        Ok(Self::new(out))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), LocoError> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|source| LocoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| LocoError::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, LocoError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|source| LocoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(f).map_err(|reason| LocoError::Parse {
            path: path.display().to_string(),
            reason,
        })
    }
}

/// Runs `policy` for `steps` transitions, restarting after each terminal
/// state.
pub fn collect_rollout<R: Rng>(
    policy: impl FnMut(&State, &mut R) -> Action,
    steps: usize,
    rng: &mut R,
) -> Result<TransitionDataset, LocoError> {
    collect_episodes(policy, steps, usize::MAX, rng)
}

/// Like [`collect_rollout`], but also restarts every `max_episode` steps.
/// Short episodes concentrate data around the start states.
pub fn collect_episodes<R: Rng>(
    mut policy: impl FnMut(&State, &mut R) -> Action,
    steps: usize,
    max_episode: usize,
    rng: &mut R,
) -> Result<TransitionDataset, LocoError> {
    if steps == 0 || max_episode == 0 {
        return Err(LocoError::Argument("rollout needs at least one step".into()));
    }
    let mut s = reset_state(rng);
    let mut age = 0;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let a = clamp_action(&policy(&s, rng));
        let r = env_step(&s, &a, rng);
        out.push(Transition { s, a, s_next: r.state });
        age += 1;
        if r.done || age >= max_episode {
            s = reset_state(rng);
            age = 0;
        } else {
            s = r.state;
        }
    }
    Ok(TransitionDataset::new(out))
}
