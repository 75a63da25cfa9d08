use super::{non_max_suppression, FeatureError, Keypoint, BORDER, DEFAULT_NMS_RADIUS};
use crate::imaging::GreyImage;

/// The 16-pixel Bresenham circle of radius 3, clockwise from the top.
pub const CIRCLE: [(isize, isize); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

#[derive(Debug, Clone, PartialEq)]
pub struct FastConfig {
    /// Intensity margin `t`, in `[1, 255]`.
    pub threshold: f64,
    /// Minimum contiguous arc, 9 (FAST-9) through 12.
    pub arc_length: usize,
    pub nms_radius: usize,
}

impl Default for FastConfig {
    fn default() -> Self {
        Self {
            threshold: 50.0,
            arc_length: 9,
            nms_radius: DEFAULT_NMS_RADIUS,
        }
    }
}

impl FastConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(1.0..=255.0).contains(&self.threshold) {
            return Err(FeatureError::Config(format!(
                "FAST threshold {} outside [1, 255]",
                self.threshold
            )));
        }
        if !(9..=12).contains(&self.arc_length) {
            return Err(FeatureError::Config(format!(
                "arc length {} outside [9, 12]",
                self.arc_length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerDecision {
    pub is_corner: bool,
    /// Sum of `|circle pixel - centre| - t` over the qualifying arc, 0 otherwise.
    pub score: f64,
}

/// Segment test at a single pixel.
pub fn fast_segment_test(
    img: &GreyImage,
    x: usize,
    y: usize,
    cfg: &FastConfig,
) -> Result<CornerDecision, FeatureError> {
    let (w, h) = (img.width(), img.height());
    if x < BORDER || y < BORDER || x + BORDER >= w || y + BORDER >= h {
        return Err(FeatureError::Border {
            x,
            y,
            width: w,
            height: h,
        });
    }
    let score = segment_score(img, x, y, cfg.threshold, cfg.arc_length);
    Ok(CornerDecision {
        is_corner: score > 0.0,
        score,
    })
}

#[inline]
fn circle_values(img: &GreyImage, x: usize, y: usize) -> [f64; 16] {
    let w = img.width() as isize;
    let px = img.pixels();
    let base = y as isize * w + x as isize;
    let mut out = [0.0; 16];
    for (o, &(dx, dy)) in out.iter_mut().zip(CIRCLE.iter()) {
        *o = px[(base + dy * w + dx) as usize] as f64;
    }
    out
}

// Returns 0 for non-corners. Caller guarantees the border margin.
#[inline]
fn segment_score(img: &GreyImage, x: usize, y: usize, t: f64, arc: usize) -> f64 {
    let p = img.get(x, y) as f64;
    let ring = circle_values(img, x, y);
    let (hi, lo) = (p + t, p - t);

    // any arc of `arc` contiguous pixels covers at least arc/4 of the 4 cardinal pixels
    let need = arc / 4;
    let bright = [0, 4, 8, 12].iter().filter(|&&i| ring[i] > hi).count();
    let dark = [0, 4, 8, 12].iter().filter(|&&i| ring[i] < lo).count();
    if bright < need && dark < need {
        return 0.0;
    }

    for polarity in [1.0f64, -1.0] {
        let passes = |v: f64| if polarity > 0.0 { v > hi } else { v < lo };
        // longest cyclic run; a full ring is its own run
        if ring.iter().all(|&v| passes(v)) {
            return ring.iter().map(|&v| (v - p).abs() - t).sum();
        }
        let Some(start) = (0..16).find(|&i| !passes(ring[i])) else {
            continue;
        };
        let mut best_len = 0;
        let mut best_sum = 0.0;
        let mut len = 0;
        let mut sum = 0.0;
        for k in 1..=16 {
            let v = ring[(start + k) % 16];
            if passes(v) {
                len += 1;
                sum += (v - p).abs() - t;
            } else {
                if len > best_len {
                    best_len = len;
                    best_sum = sum;
                }
                len = 0;
                sum = 0.0;
            }
        }
        if best_len >= arc {
            return best_sum;
        }
    }
    0.0
}

/// Dense segment-test score map (0 where not a corner or inside the border).
pub fn fast_score_map(img: &GreyImage, cfg: &FastConfig) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut scores = vec![0.0; w * h];
    if w < 2 * BORDER + 1 || h < 2 * BORDER + 1 {
        return scores;
    }
    for y in BORDER..h - BORDER {
        for x in BORDER..w - BORDER {
            scores[y * w + x] = segment_score(img, x, y, cfg.threshold, cfg.arc_length);
        }
    }
    scores
}

/// All FAST corners after score-based non-maximum suppression, sorted by `(y, x)`.
pub fn fast_detect(img: &GreyImage, cfg: &FastConfig) -> Vec<Keypoint> {
    let scores = fast_score_map(img, cfg);
    non_max_suppression(&scores, img.width(), img.height(), cfg.nms_radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    fn patch_with_arc(len: usize, start: usize, centre: u8, arc_value: u8) -> GreyImage {
        let mut img = GreyImage::filled(15, 15, centre);
        for k in 0..len {
            let (dx, dy) = CIRCLE[(start + k) % 16];
            img.set((7 + dx) as usize, (7 + dy) as usize, arc_value);
        }
        img
    }

    #[test]
    fn constant_image_has_no_corner() {
        let img = GreyImage::filled(15, 15, 90);
        let d = fast_segment_test(&img, 7, 7, &FastConfig::default()).unwrap();
        assert!(!d.is_corner);
        assert_eq!(d.score, 0.0);
    }

    #[test]
    fn twelve_pixel_arc_is_a_corner() {
        let img = patch_with_arc(12, 5, 0, 255);
        let d = fast_segment_test(&img, 7, 7, &FastConfig::default()).unwrap();
        assert!(d.is_corner);
        assert_eq!(d.score, 12.0 * (255.0 - 50.0));
    }

    #[test]
    fn threshold_above_contrast_rejects() {
        let img = patch_with_arc(12, 5, 0, 255);
        let cfg = FastConfig {
            threshold: 255.0,
            ..Default::default()
        };
        assert!(!fast_segment_test(&img, 7, 7, &cfg).unwrap().is_corner);
    }

    #[test]
    fn arc_of_eight_is_not_fast9_but_wraps() {
        let img = patch_with_arc(8, 12, 200, 10);
        assert!(!fast_segment_test(&img, 7, 7, &FastConfig::default()).unwrap().is_corner);
        // wrap-around arc 13..=5 of length 9
        let img = patch_with_arc(9, 13, 200, 10);
        assert!(fast_segment_test(&img, 7, 7, &FastConfig::default()).unwrap().is_corner);
    }

    #[test]
    fn arc_length_twelve_is_stricter() {
        let img = patch_with_arc(10, 0, 0, 255);
        let cfg12 = FastConfig {
            arc_length: 12,
            ..Default::default()
        };
        assert!(fast_segment_test(&img, 7, 7, &FastConfig::default()).unwrap().is_corner);
        assert!(!fast_segment_test(&img, 7, 7, &cfg12).unwrap().is_corner);
    }

    #[test]
    fn border_pixels_are_domain_errors() {
        let img = GreyImage::filled(10, 10, 0);
        let cfg = FastConfig::default();
        assert!(matches!(
            fast_segment_test(&img, 2, 5, &cfg),
            Err(FeatureError::Border { .. })
        ));
        assert!(fast_segment_test(&img, 7, 5, &cfg).is_err());
        assert!(fast_segment_test(&img, 6, 6, &cfg).is_ok());
    }

    #[test]
    fn constant_image_detects_nothing() {
        assert!(fast_detect(&GreyImage::filled(64, 64, 77), &FastConfig::default()).is_empty());
    }

    #[test]
    fn tiny_image_detects_nothing() {
        assert!(fast_detect(&GreyImage::filled(6, 6, 0), &FastConfig::default()).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(FastConfig::default().validate().is_ok());
        let bad = FastConfig {
            arc_length: 8,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FastConfig {
            threshold: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest::proptest! {
        // NMS can un-suppress neighbours, so only the raw corner set is monotone
        #[test]
        fn raw_corner_set_shrinks_with_threshold(seed in proptest::prelude::any::<u64>(), t in 1.0f64..200.0) {
            let mut rng = seeded_rng(seed);
            let img = GreyImage::from_fn(32, 32, |_, _| rng.random());
            let lo = fast_score_map(&img, &FastConfig { threshold: t, ..Default::default() });
            let hi = fast_score_map(&img, &FastConfig { threshold: t + 5.0, ..Default::default() });
            for (a, b) in lo.iter().zip(&hi) {
                proptest::prop_assert!(*b == 0.0 || *a > 0.0);
            }
        }
    }

    #[test]
    fn keypoints_respect_border_and_order() {
        let mut rng = seeded_rng(4);
        let img = GreyImage::from_fn(64, 48, |_, _| rng.random());
        let kps = fast_detect(
            &img,
            &FastConfig {
                threshold: 20.0,
                ..Default::default()
            },
        );
        assert!(!kps.is_empty());
        for k in &kps {
            assert!(k.x >= 3 && k.x < 61 && k.y >= 3 && k.y < 45);
            assert!(k.score > 0.0);
        }
        assert!(kps.windows(2).all(|p| (p[0].y, p[0].x) < (p[1].y, p[1].x)));
    }
}
