//! Keypoint detection: FAST-9 segment test, the dynamic threshold controller
//! that keeps per-frame keypoint counts inside a target band, and the learned
//! sparse linear interest-point detector (Leaky-SLIPD).

mod dynthresh;
mod fast;
mod nms;
mod slipd;

pub use dynthresh::{regulate, DynThreshState, ThresholdMode};
pub use fast::{fast_detect, fast_score_map, fast_segment_test, CornerDecision, FastConfig, CIRCLE};
pub use nms::non_max_suppression;
pub use slipd::{
    extract_patch, leaky_relu, slipd_detect, slipd_loss, slipd_project, slipd_score_map, slipd_train,
    CorrespondencePair, ScoreMap, SlipdLoss, SlipdModel, SlipdTrainConfig, SlipdTrainReport,
    KL_VARIANCE_EPS,
};

use std::path::PathBuf;
use thiserror::Error;

use crate::imaging::GreyImage;

/// Pixels closer than this to any border are never reported as keypoints.
pub const BORDER: usize = 3;

/// Default non-maximum-suppression radius (Chebyshev distance, pixels).
pub const DEFAULT_NMS_RADIUS: usize = 3;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("pixel ({x}, {y}) is within {BORDER} pixels of the border of a {width}x{height} image")]
    Border {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("training diverged: non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("model manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A detected interest point. Coordinates are at least [`BORDER`] pixels from
/// every image edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

/// Either detector, parametrized by a scalar threshold that the dynamic
/// threshold controller can regulate.
#[derive(Debug, Clone)]
pub enum Detector {
    Fast(FastConfig),
    Slipd(SlipdModel),
}

impl Detector {
    pub fn detect(&self, img: &GreyImage, threshold: f64) -> Vec<Keypoint> {
        match self {
            Detector::Fast(cfg) => fast_detect(
                img,
                &FastConfig {
                    threshold,
                    ..cfg.clone()
                },
            ),
            Detector::Slipd(model) => slipd_detect(model, img, threshold),
        }
    }

    /// Initial threshold and clamp range for the controller.
    pub fn threshold_state(&self) -> DynThreshState {
        match self {
            Detector::Fast(cfg) => DynThreshState::for_fast(cfg.threshold),
            Detector::Slipd(model) => DynThreshState::for_slipd(model.score_threshold),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Detector::Fast(_) => "fast",
            Detector::Slipd(_) => "slipd",
        }
    }
}
