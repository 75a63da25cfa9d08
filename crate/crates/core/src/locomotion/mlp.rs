use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Action, DatasetStats, LocoError, State, TransitionDataset, ACTION_DIM, STATE_DIM};
use crate::seeded_rng;

/// Fully connected network, `tanh` on hidden layers, linear output.
/// Batches are column-major: one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Mlp {
    /// Glorot-normal weights, zero biases.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let std = (2.0 / (w[0] + w[1]) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| normal.sample(rng)));
            biases.push(DVector::zeros(w[1]));
        }
        Self { weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().nrows()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let last = self.weights.len() - 1;
        let mut h = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &h;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                z.apply(|v| *v = v.tanh());
            }
            h = z;
        }
        h
    }

    /// Mean over all entries of `(f(x) - t)²`, and its gradient.
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> (f64, Mlp) {
        let last = self.weights.len() - 1;
        let mut acts = vec![x.clone()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        let diff = acts.last().unwrap() - t;
        let n = diff.len() as f64;
        let loss = diff.norm_squared() / n;
        let mut delta = diff * (2.0 / n);
        let mut gw = Vec::with_capacity(self.weights.len());
        let mut gb = Vec::with_capacity(self.weights.len());
        for l in (0..=last).rev() {
            gw.push(&delta * acts[l].transpose());
            gb.push(delta.column_sum());
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                back.zip_apply(&acts[l], |d, a| *d *= 1.0 - a * a);
                delta = back;
            }
        }
        gw.reverse();
        gb.reverse();
        (loss, Mlp { weights: gw, biases: gb })
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = p[i];
                i += 1;
            }
        }
    }

    fn axpy(&mut self, a: f64, other: &Mlp) {
        for (w, g) in self.weights.iter_mut().zip(&other.weights) {
            *w += g * a;
        }
        for (b, g) in self.biases.iter_mut().zip(&other.biases) {
            *b += g * a;
        }
    }

    fn scale(&mut self, a: f64) {
        self.weights.iter_mut().for_each(|w| *w *= a);
        self.biases.iter_mut().for_each(|b| *b *= a);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 40,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
        }
    }
}

/// Minibatch SGD with heavy-ball momentum over shuffled columns of `x`.
/// Returns the mean training loss of every epoch.
pub fn fit_mlp(
    mlp: &mut Mlp,
    x: &DMatrix<f64>,
    t: &DMatrix<f64>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, LocoError> {
    let n = x.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = mlp.clone();
    velocity.scale(0.0);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = x.select_columns(chunk);
            let tb = t.select_columns(chunk);
            let (loss, grad) = mlp.loss_and_grad(&xb, &tb);
            if !loss.is_finite() {
                return Err(LocoError::NonFinite { epoch });
            }
            total += loss * chunk.len() as f64;
            velocity.scale(cfg.momentum);
            velocity.axpy(-cfg.learning_rate, &grad);
            mlp.axpy(1.0, &velocity);
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(LocoError::NonFinite { epoch });
        }
        trace.push(mean);
    }
    Ok(trace)
}

/// Learned transition model: predicts normalized `s_next - s` from normalized
/// `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    pub mlp: Mlp,
    /// Statistics of the training set.
    pub stats: DatasetStats,
    pub seed: u64,
}

impl DynamicsModel {
    /// Next states for a batch of `(s, a)` pairs.
    pub fn predict_batch(&self, states: &[State], actions: &[Action]) -> Vec<State> {
        let x = input_matrix(
            states.iter().zip(actions).map(|(s, a)| {
                let mut v = [0.0; STATE_DIM + ACTION_DIM];
                v[..STATE_DIM].copy_from_slice(s);
                v[STATE_DIM..].copy_from_slice(a);
                v
            }),
            &self.stats,
        );
        let z = self.mlp.forward(&x);
        let ts = &self.stats.targets;
        states
            .iter()
            .enumerate()
            .map(|(j, s)| std::array::from_fn(|i| s[i] + z[(i, j)] * ts.std[i] + ts.mean[i]))
            .collect()
    }

    pub fn predict(&self, s: &State, a: &Action) -> State {
        self.predict_batch(&[*s], &[*a])[0]
    }
}

fn input_matrix(rows: impl ExactSizeIterator<Item = [f64; 10]>, stats: &DatasetStats) -> DMatrix<f64> {
    let n = rows.len();
    let st = &stats.inputs;
    let mut x = DMatrix::zeros(STATE_DIM + ACTION_DIM, n);
    for (j, r) in rows.enumerate() {
        for i in 0..STATE_DIM + ACTION_DIM {
            x[(i, j)] = (r[i] - st.mean[i]) / st.std[i];
        }
    }
    x
}

fn target_matrix(d: &TransitionDataset, stats: &DatasetStats) -> DMatrix<f64> {
    let ts = &stats.targets;
    let mut t = DMatrix::zeros(STATE_DIM, d.len());
    for (j, tr) in d.transitions().iter().enumerate() {
        let delta = tr.delta();
        for i in 0..STATE_DIM {
            t[(i, j)] = (delta[i] - ts.mean[i]) / ts.std[i];
        }
    }
    t
}

/// Mean squared error of predicted `s_next - s`, each dimension scaled by the
/// standard deviation of the validation targets so scores from models trained
/// on different subsets are comparable.
pub fn validation_mse(model: &DynamicsModel, val: &TransitionDataset) -> f64 {
    let vt = &val.stats().targets;
    let states: Vec<State> = val.transitions().iter().map(|t| t.s).collect();
    let actions: Vec<Action> = val.transitions().iter().map(|t| t.a).collect();
    let pred = model.predict_batch(&states, &actions);
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(val.transitions()) {
        for i in 0..STATE_DIM {
            let e = (p[i] - t.s_next[i]) / vt.std[i];
            sum += e * e;
        }
    }
    sum / (val.len() * STATE_DIM) as f64
}

pub const MIN_TRAIN_SIZE: usize = 32;

/// Trains a 10-64-64-6 model on `data` and scores it on `val`.
pub fn train_dynamics(
    data: &TransitionDataset,
    val: &TransitionDataset,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<(DynamicsModel, f64), LocoError> {
    if data.len() < MIN_TRAIN_SIZE {
        return Err(LocoError::Argument(format!(
            "training needs at least {MIN_TRAIN_SIZE} transitions, got {}",
            data.len()
        )));
    }
    if val.is_empty() {
        return Err(LocoError::Argument("validation set is empty".into()));
    }
    let mut rng = seeded_rng(seed);
    let stats = data.stats().clone();
    let mut mlp = Mlp::new(&[STATE_DIM + ACTION_DIM, cfg.hidden, cfg.hidden, STATE_DIM], &mut rng);
    let x = input_matrix(data.transitions().iter().map(|t| t.input()), &stats);
    let t = target_matrix(data, &stats);
    fit_mlp(&mut mlp, &x, &t, cfg, &mut rng)?;
    let model = DynamicsModel { mlp, stats, seed };
    let mse = validation_mse(&model, val);
    Ok((model, mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locomotion::{collect_rollout, random_action};

    fn random_batch(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5))
    }

    // Central differences on every parameter of small random networks.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded_rng(7);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let sizes = [3, rng.random_range(2..6), rng.random_range(2..6), 2];
            let mut net = Mlp::new(&sizes, &mut rng);
            let mut p = net.params();
            for v in &mut p {
                *v += rng.random_range(-0.3..0.3);
            }
            net.set_params(&p);
            let x = random_batch(3, 4, &mut rng);
            let t = random_batch(2, 4, &mut rng);
            let (_, g) = net.loss_and_grad(&x, &t);
            let ga = g.params();
            let h = 1e-5;
            for i in 0..p.len() {
                let mut q = p.clone();
                q[i] = p[i] + h;
                net.set_params(&q);
                let up = net.loss_and_grad(&x, &t).0;
                q[i] = p[i] - h;
                net.set_params(&q);
                let down = net.loss_and_grad(&x, &t).0;
                let fd = (up - down) / (2.0 * h);
                let rel = (ga[i] - fd).abs() / (ga[i].abs() + fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn overfits_sixteen_points() {
        let mut rng = seeded_rng(8);
        let x = random_batch(10, 16, &mut rng);
        let t = random_batch(6, 16, &mut rng);
        let mut net = Mlp::new(&[10, 64, 64, 6], &mut rng);
        let cfg = TrainConfig {
            epochs: 3000,
            batch_size: 16,
            ..Default::default()
        };
        let trace = fit_mlp(&mut net, &x, &t, &cfg, &mut rng).unwrap();
        let final_loss = net.loss_and_grad(&x, &t).0;
        assert!(final_loss < 1e-3, "{final_loss} (first epoch {})", trace[0]);
    }

    #[test]
    fn divergence_reports_epoch() {
        let mut rng = seeded_rng(9);
        let x = random_batch(10, 64, &mut rng) * 1e3;
        let t = random_batch(6, 64, &mut rng) * 1e3;
        let mut net = Mlp::new(&[10, 8, 6], &mut rng);
        let cfg = TrainConfig {
            learning_rate: 1e6,
            epochs: 50,
            ..Default::default()
        };
        let err = fit_mlp(&mut net, &x, &t, &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, LocoError::NonFinite { .. }), "{err}");
    }

    #[test]
    fn train_is_deterministic_and_sane() {
        let policy = |_: &State, rng: &mut crate::SeededRng| random_action(rng);
        let d = collect_rollout(policy, 400, &mut seeded_rng(10)).unwrap();
        let val = collect_rollout(policy, 200, &mut seeded_rng(11)).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            ..Default::default()
        };
        let (m1, a) = train_dynamics(&d, &val, 3, &cfg).unwrap();
        let (_, b) = train_dynamics(&d, &val, 3, &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a.is_finite() && a < 1.0, "{a}");
        let t = d.transitions()[0];
        let p = m1.predict(&t.s, &t.a);
        assert!(p.iter().all(|v| v.is_finite()));
        // denormalized output is in state units: close to the true next roll
        assert!((p[0] - t.s_next[0]).abs() < 0.1);
        let small = TransitionDataset::new(d.transitions()[..31].to_vec());
        assert!(train_dynamics(&small, &val, 3, &cfg).is_err());
    }
}
