use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{non_max_suppression, FeatureError, Keypoint, BORDER, DEFAULT_NMS_RADIUS};
use crate::imaging::GreyImage;

/// Variance floor used inside the KL term.
pub const KL_VARIANCE_EPS: f64 = 1e-12;

const MANIFEST_MAGIC: &str = "slipd-model v1";

/// Sparse linear interest-point detector.
///
/// A pixel's score is `sum_i leaky(w_i * x_i)` over its `block x block`
/// neighbourhood, with intensities scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlipdModel {
    pub block: usize,
    /// Row-major `block * block` weights.
    pub weights: Vec<f64>,
    pub leaky_slope: f64,
    pub lambda: f64,
    pub kl_weight: f64,
    pub target_k: usize,
    pub score_threshold: f64,
}

impl Default for SlipdModel {
    fn default() -> Self {
        Self {
            block: 5,
            weights: vec![0.0; 25],
            leaky_slope: 0.01,
            lambda: 1e-3,
            kl_weight: 0.1,
            target_k: 8,
            score_threshold: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondencePair {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl CorrespondencePair {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>) -> Result<Self, FeatureError> {
        let n = (x1.len() as f64).sqrt().round() as usize;
        if x1.len() != x2.len() || n * n != x1.len() || x1.is_empty() {
            return Err(FeatureError::Config(format!(
                "patches must both hold n^2 entries, got {} and {}",
                x1.len(),
                x2.len()
            )));
        }
        Ok(Self { x1, x2 })
    }
}

#[inline]
pub fn leaky_relu(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        slope * z
    }
}

#[inline]
fn leaky_slope_at(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        slope
    }
}

impl SlipdModel {
    pub fn with_weights(weights: Vec<f64>) -> Result<Self, FeatureError> {
        let block = (weights.len() as f64).sqrt().round() as usize;
        if block * block != weights.len() || block.is_multiple_of(2) {
            return Err(FeatureError::Config(format!(
                "{} weights is not an odd square block",
                weights.len()
            )));
        }
        Ok(Self {
            block,
            weights,
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.block.is_multiple_of(2) || self.weights.len() != self.block * self.block {
            return Err(FeatureError::Config(format!(
                "block {} with {} weights",
                self.block,
                self.weights.len()
            )));
        }
        if self.target_k == 0 || !(self.score_threshold > 0.0) {
            return Err(FeatureError::Config(
                "target_k must be >= 1 and score_threshold > 0".into(),
            ));
        }
        Ok(())
    }

    /// Score of one normalized patch.
    pub fn score(&self, patch: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(patch)
            .map(|(&w, &x)| leaky_relu(w * x, self.leaky_slope))
            .sum()
    }

    /// `d score / d w_i` for one patch.
    pub fn score_grad(&self, patch: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(patch)
            .map(|(&w, &x)| leaky_slope_at(w * x, self.leaky_slope) * x)
            .collect()
    }

    pub fn nonzeros(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Text manifest: one `key value` line per field, then the weights row by row
    /// with 17 significant digits.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MANIFEST_MAGIC}").unwrap();
        writeln!(s, "block {}", self.block).unwrap();
        writeln!(s, "leaky_slope {:.16e}", self.leaky_slope).unwrap();
        writeln!(s, "lambda {:.16e}", self.lambda).unwrap();
        writeln!(s, "kl_weight {:.16e}", self.kl_weight).unwrap();
        writeln!(s, "target_k {}", self.target_k).unwrap();
        writeln!(s, "score_threshold {:.16e}", self.score_threshold).unwrap();
        writeln!(s, "weights").unwrap();
        for row in self.weights.chunks(self.block) {
            let cells: Vec<String> = row.iter().map(|w| format!("{w:.16e}")).collect();
            writeln!(s, "{}", cells.join(" ")).unwrap();
        }
        s
    }

    pub fn from_manifest(text: &str) -> Result<Self, FeatureError> {
        let bad = |line: usize, reason: String| FeatureError::Manifest { line, reason };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, MANIFEST_MAGIC)) => {}
            _ => return Err(bad(1, format!("expected header {MANIFEST_MAGIC:?}"))),
        }
        let mut m = SlipdModel {
            weights: Vec::new(),
            ..Default::default()
        };
        let mut seen_weights = false;
        for (no, line) in lines.by_ref() {
            if line.is_empty() {
                continue;
            }
            if line == "weights" {
                seen_weights = true;
                break;
            }
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| bad(no, format!("expected `key value`, got {line:?}")))?;
            let real = || {
                value
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| bad(no, format!("{key}: {e}")))
            };
            let int = || {
                value
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| bad(no, format!("{key}: {e}")))
            };
            match key {
                "block" => m.block = int()?,
                "leaky_slope" => m.leaky_slope = real()?,
                "lambda" => m.lambda = real()?,
                "kl_weight" => m.kl_weight = real()?,
                "target_k" => m.target_k = int()?,
                "score_threshold" => m.score_threshold = real()?,
                other => return Err(bad(no, format!("unknown key {other:?}"))),
            }
        }
        if !seen_weights {
            return Err(bad(0, "missing `weights` section".into()));
        }
        for (no, line) in lines {
            for tok in line.split_whitespace() {
                m.weights
                    .push(tok.parse().map_err(|e| bad(no, format!("weight {tok:?}: {e}")))?);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_manifest()).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_manifest(&text)
    }
}

/// Extracts the normalized `block x block` patch centred on `(x, y)`, or `None`
/// if it does not fit.
pub fn extract_patch(img: &GreyImage, x: usize, y: usize, block: usize) -> Option<Vec<f64>> {
    let r = block / 2;
    if x < r || y < r || x + r >= img.width() || y + r >= img.height() {
        return None;
    }
    let mut out = Vec::with_capacity(block * block);
    for yy in y - r..=y + r {
        for xx in x - r..=x + r {
            out.push(img.get(xx, yy) as f64 / 255.0);
        }
    }
    Some(out)
}

/// Dense score map; pixels whose block does not fit are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub width: usize,
    pub height: usize,
    pub margin: usize,
    values: Vec<f64>,
}

impl ScoreMap {
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let m = self.margin;
        if x < m || y < m || x + m >= self.width || y + m >= self.height {
            None
        } else {
            Some(self.values[y * self.width + x])
        }
    }
}

pub fn slipd_score_map(model: &SlipdModel, img: &GreyImage) -> ScoreMap {
    let (w, h) = (img.width(), img.height());
    let r = model.block / 2;
    let mut values = vec![0.0; w * h];
    // only nonzero taps contribute (leaky(0) = 0)
    let taps: Vec<(usize, usize, f64)> = model
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &wt)| wt != 0.0)
        .map(|(i, &wt)| (i % model.block, i / model.block, wt))
        .collect();
    if w > 2 * r && h > 2 * r {
        let px = img.pixels();
        for y in r..h - r {
            for x in r..w - r {
                let mut s = 0.0;
                for &(dx, dy, wt) in &taps {
                    let v = px[(y + dy - r) * w + (x + dx - r)] as f64 / 255.0;
                    s += leaky_relu(wt * v, model.leaky_slope);
                }
                values[y * w + x] = s;
            }
        }
    }
    ScoreMap {
        width: w,
        height: h,
        margin: r,
        values,
    }
}

/// Keypoints with `|score| >= tau` after the same non-maximum suppression as
/// FAST, ranked by `|score|`.
pub fn slipd_detect(model: &SlipdModel, img: &GreyImage, tau: f64) -> Vec<Keypoint> {
    let map = slipd_score_map(model, img);
    let (w, h) = (img.width(), img.height());
    let m = BORDER.max(model.block / 2);
    let mut cand = vec![0.0; w * h];
    if w > 2 * m && h > 2 * m {
        for y in m..h - m {
            for x in m..w - m {
                let a = map.values[y * w + x].abs();
                if a >= tau && a > 0.0 {
                    cand[y * w + x] = a;
                }
            }
        }
    }
    non_max_suppression(&cand, w, h, DEFAULT_NMS_RADIUS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlipdLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub l1: f64,
    pub squared: f64,
    pub kl: f64,
    pub mean: f64,
    pub variance: f64,
    /// Set when the batch score variance fell below [`KL_VARIANCE_EPS`].
    pub kl_clamped: bool,
}

/// Loss and exact gradient on one minibatch.
///
/// `loss = lambda |w|_1 + mean_i (f(x1_i) - f(x2_i))^2 + beta KL(N(mu, s^2) || N(0, 1))`
/// with `(mu, s^2)` the population moments of all `2N` scores in the batch.
/// Below the variance floor the KL term is evaluated at the floor and its
/// variance derivative is zero.
pub fn slipd_loss(
    model: &SlipdModel,
    batch: &[CorrespondencePair],
) -> Result<SlipdLoss, FeatureError> {
    if batch.is_empty() {
        return Err(FeatureError::Degenerate("empty batch".into()));
    }
    let d = model.weights.len();
    if let Some(p) = batch.iter().find(|p| p.x1.len() != d || p.x2.len() != d) {
        return Err(FeatureError::Config(format!(
            "patch of {} entries for {} weights",
            p.x1.len(),
            d
        )));
    }
    let n = batch.len() as f64;
    let m = 2.0 * n;

    let mut scores = Vec::with_capacity(2 * batch.len());
    let mut grads = Vec::with_capacity(2 * batch.len());
    for p in batch {
        scores.push(model.score(&p.x1));
        scores.push(model.score(&p.x2));
        grads.push(model.score_grad(&p.x1));
        grads.push(model.score_grad(&p.x2));
    }

    let mut grad = vec![0.0; d];

    let l1: f64 = model.weights.iter().map(|w| w.abs()).sum();
    for (g, &w) in grad.iter_mut().zip(&model.weights) {
        // subgradient 0 at w = 0
        *g += model.lambda * if w > 0.0 { 1.0 } else if w < 0.0 { -1.0 } else { 0.0 };
    }

    let mut squared = 0.0;
    for i in 0..batch.len() {
        let diff = scores[2 * i] - scores[2 * i + 1];
        squared += diff * diff;
        for (g, (a, b)) in grad.iter_mut().zip(grads[2 * i].iter().zip(&grads[2 * i + 1])) {
            *g += 2.0 * diff * (a - b) / n;
        }
    }
    squared /= n;

    let mean = scores.iter().sum::<f64>() / m;
    let variance = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / m;
    let kl_clamped = variance < KL_VARIANCE_EPS;
    let v = variance.max(KL_VARIANCE_EPS);
    let kl = 0.5 * (v + mean * mean - 1.0 - v.ln());
    let dkl_dmean = mean;
    let dkl_dvar = if kl_clamped { 0.0 } else { 0.5 * (1.0 - 1.0 / v) };
    for (s, gs) in scores.iter().zip(&grads) {
        let c = model.kl_weight * (dkl_dmean / m + dkl_dvar * 2.0 * (s - mean) / m);
        for (g, gi) in grad.iter_mut().zip(gs) {
            *g += c * gi;
        }
    }

    Ok(SlipdLoss {
        loss: model.lambda * l1 + squared + model.kl_weight * kl,
        grad,
        l1,
        squared,
        kl,
        mean,
        variance,
        kl_clamped,
    })
}

/// Keeps the `k` largest-magnitude weights (lowest index wins ties), zeroes
/// the rest, and optionally rescales to unit Euclidean norm.
pub fn slipd_project(w: &[f64], k: usize, unit: bool) -> Result<Vec<f64>, FeatureError> {
    if k == 0 {
        return Err(FeatureError::Config("sparsity k must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..w.len()).collect();
    // stable sort keeps lower indices first among equal magnitudes
    order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()));
    let mut out = vec![0.0; w.len()];
    for &i in order.iter().take(k) {
        out[i] = w[i];
    }
    if unit {
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(FeatureError::Degenerate(
                "cannot normalize an all-zero weight vector".into(),
            ));
        }
        out.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlipdTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
}

impl Default for SlipdTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 256,
            steps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlipdTrainReport {
    /// Full-set loss of the initial weights.
    pub initial_loss: f64,
    /// Full-set loss of the exported weights.
    pub final_loss: f64,
    /// Minibatch loss at every step.
    pub trace: Vec<f64>,
    /// Steps on which the KL variance floor was hit.
    pub kl_clamped_steps: usize,
}

/// Minibatch SGD with a unit-norm projection after every step and a top-k
/// projection over the final 10% of steps and at export.
///
/// `defaults` supplies block size and loss hyperparameters; its weights are
/// ignored and re-initialized from `rng`.
pub fn slipd_train(
    pairs: &[CorrespondencePair],
    defaults: &SlipdModel,
    cfg: &SlipdTrainConfig,
    rng: &mut impl Rng,
) -> Result<(SlipdModel, SlipdTrainReport), FeatureError> {
    if pairs.is_empty() {
        return Err(FeatureError::Degenerate("no training pairs".into()));
    }
    if cfg.steps == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(FeatureError::Config(format!("bad training config {cfg:?}")));
    }
    let d = defaults.block * defaults.block;
    let mut model = SlipdModel {
        weights: vec![0.0; d],
        ..defaults.clone()
    };
    model.validate()?;

    let init: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    model.weights = slipd_project(&init, d, true)?;
    let initial_loss = slipd_loss(&model, pairs)?.loss;

    let sparse_from = cfg.steps - cfg.steps.div_ceil(10);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut clamped = 0;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size.min(pairs.len()) {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            batch.push(pairs[order[cursor]].clone());
            cursor += 1;
        }
        let out = slipd_loss(&model, &batch)?;
        if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
            return Err(FeatureError::NonFiniteLoss { step });
        }
        clamped += out.kl_clamped as usize;
        trace.push(out.loss);
        let stepped: Vec<f64> = model
            .weights
            .iter()
            .zip(&out.grad)
            .map(|(w, g)| w - cfg.learning_rate * g)
            .collect();
        let k = if step >= sparse_from { model.target_k } else { d };
        model.weights = slipd_project(&stepped, k, true)?;
    }

    model.weights = slipd_project(&model.weights, model.target_k, true)?;
    let final_loss = slipd_loss(&model, pairs)?.loss;
    if !final_loss.is_finite() {
        return Err(FeatureError::NonFiniteLoss { step: cfg.steps });
    }
    Ok((
        model,
        SlipdTrainReport {
            initial_loss,
            final_loss,
            trace,
            kl_clamped_steps: clamped,
        },
    ))
}
