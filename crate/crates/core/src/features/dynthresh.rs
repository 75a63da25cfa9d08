use super::{Detector, FeatureError, Keypoint};
use crate::imaging::GreyImage;

/// Feedback-controlled detector threshold.
///
/// After each frame the threshold is scaled up by `up_rate` when more than
/// `max_count` keypoints were found and down by `down_rate` when fewer than
/// `min_count` were, then clamped to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynThreshState {
    pub threshold: f64,
    pub up_rate: f64,
    pub down_rate: f64,
    pub min_count: usize,
    pub max_count: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Default for DynThreshState {
    fn default() -> Self {
        Self::for_fast(50.0)
    }
}

impl DynThreshState {
    /// FAST intensity thresholds, clamped to `[1, 255]`.
    pub fn for_fast(threshold: f64) -> Self {
        Self {
            threshold: threshold.clamp(1.0, 255.0),
            up_rate: 1.1,
            down_rate: 0.9,
            min_count: 1000,
            max_count: 2000,
            lower: 1.0,
            upper: 255.0,
        }
    }

    /// SLIPD score thresholds, clamped to `[0.1, 10]`.
    pub fn for_slipd(tau: f64) -> Self {
        Self {
            threshold: tau.clamp(0.1, 10.0),
            lower: 0.1,
            upper: 10.0,
            ..Self::for_fast(50.0)
        }
    }

    pub fn with_band(mut self, min_count: usize, max_count: usize) -> Self {
        self.min_count = min_count;
        self.max_count = max_count;
        self
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let ok = self.min_count < self.max_count
            && self.up_rate > 1.0
            && self.down_rate > 0.0
            && self.down_rate < 1.0
            && self.lower > 0.0
            && self.lower <= self.upper
            && (self.lower..=self.upper).contains(&self.threshold);
        if ok {
            Ok(())
        } else {
            Err(FeatureError::Config(format!("invalid threshold controller {self:?}")))
        }
    }

    /// One controller step. Pure: returns the state for the next frame.
    #[must_use]
    pub fn update(&self, observed_count: usize) -> Self {
        let mut t = self.threshold;
        if observed_count > self.max_count {
            t *= self.up_rate;
        } else if observed_count < self.min_count {
            t *= self.down_rate;
        }
        Self {
            threshold: t.clamp(self.lower, self.upper),
            ..*self
        }
    }

    pub fn in_band(&self, count: usize) -> bool {
        (self.min_count..=self.max_count).contains(&count)
    }
}

/// When the updated threshold takes effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// Detect once per frame; the update applies to the next frame.
    #[default]
    CarryForward,
    /// Re-detect on the same frame until the count is in band or the
    /// iteration budget runs out.
    Redetect { max_iters: usize },
}

/// Detects keypoints under the controller and returns them with the state to
/// use on the next frame.
pub fn regulate(
    detector: &Detector,
    img: &GreyImage,
    state: DynThreshState,
    mode: ThresholdMode,
) -> (Vec<Keypoint>, DynThreshState) {
    let mut state = state;
    let mut kps = detector.detect(img, state.threshold);
    if let ThresholdMode::Redetect { max_iters } = mode {
        for _ in 1..max_iters {
            if state.in_band(kps.len()) {
                break;
            }
            let next = state.update(kps.len());
            if next.threshold == state.threshold {
                break;
            }
            state = next;
            kps = detector.detect(img, state.threshold);
        }
    }
    let next = state.update(kps.len());
    (kps, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FastConfig;
    use crate::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn anchor_updates() {
        let s = DynThreshState::default();
        assert!((s.update(2500).threshold - 55.0).abs() < 1e-12);
        assert_eq!(s.update(1500).threshold, 50.0);
        assert!((s.update(500).threshold - 45.0).abs() < 1e-12);
        // band edges are inside
        assert_eq!(s.update(1000).threshold, 50.0);
        assert_eq!(s.update(2000).threshold, 50.0);
    }

    #[test]
    fn clamps_at_bounds() {
        let mut s = DynThreshState::for_fast(250.0);
        s = s.update(10_000);
        assert_eq!(s.threshold, 255.0);
        let mut s = DynThreshState::for_fast(1.05);
        s = s.update(0);
        assert_eq!(s.threshold, 1.0);
        let s = DynThreshState::for_slipd(0.105).update(0);
        assert_eq!(s.threshold, 0.1);
    }

    #[test]
    fn validation() {
        assert!(DynThreshState::default().validate().is_ok());
        assert!(DynThreshState::default().with_band(5, 5).validate().is_err());
        let s = DynThreshState {
            down_rate: 1.0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn redetect_moves_towards_band() {
        // isolated squares on a grid, contrasts spread over 20..=150
        let mut rng = seeded_rng(8);
        let mut img = GreyImage::filled(128, 128, 100);
        for gy in 0..15 {
            for gx in 0..15 {
                let v = 100 + rng.random_range(20..=150u8).min(155);
                for y in 0..3 {
                    for x in 0..3 {
                        img.set(6 + gx * 8 + x, 6 + gy * 8 + y, v);
                    }
                }
            }
        }
        let det = Detector::Fast(FastConfig::default());
        let state = DynThreshState::for_fast(20.0).with_band(10, 60);
        let (once, after_once) = regulate(&det, &img, state, ThresholdMode::CarryForward);
        assert!(once.len() > 60);
        assert!((after_once.threshold - 22.0).abs() < 1e-12);
        let (re, after) = regulate(&det, &img, state, ThresholdMode::Redetect { max_iters: 10 });
        assert!(re.len() < once.len());
        assert!(after.threshold > after_once.threshold);
        assert!(after.threshold <= 20.0 * 1.1f64.powi(10) + 1e-9);
    }

    #[test]
    fn carry_forward_detects_once_at_current_threshold() {
        let mut rng = seeded_rng(9);
        let img = GreyImage::from_fn(64, 64, |_, _| rng.random());
        let det = Detector::Fast(FastConfig::default());
        let state = DynThreshState::for_fast(30.0);
        let (kps, next) = regulate(&det, &img, state, ThresholdMode::CarryForward);
        assert_eq!(kps, det.detect(&img, 30.0));
        assert_eq!(next, state.update(kps.len()));
    }

    proptest! {
        #[test]
        fn stays_in_bounds_forever(t0 in 1.0f64..=255.0, counts in prop::collection::vec(0usize..5000, 1..400)) {
            let mut s = DynThreshState::for_fast(t0);
            for c in counts {
                s = s.update(c);
                prop_assert!((1.0..=255.0).contains(&s.threshold));
            }
        }

        #[test]
        fn alternating_counts_stay_bounded(t0 in 1.0f64..=255.0, n in 1usize..2000) {
            let mut s = DynThreshState::for_fast(t0);
            for i in 0..n {
                s = s.update(if i % 2 == 0 { 5000 } else { 0 });
                prop_assert!((1.0..=255.0).contains(&s.threshold));
            }
        }
    }
}
