use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{GreyImage, ImageError};
use crate::{seeded_rng, SeededRng};

/// Adds i.i.d. `N(0, sigma^2)` noise to every pixel.
///
/// Each output pixel is `clamp(round(p + n), 0, 255)` with rounding half away
/// from zero. The input is left untouched.
pub fn add_gaussian_noise(
    img: &GreyImage,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<GreyImage, ImageError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(ImageError::Argument(format!(
            "noise sigma must be finite and non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated above");
    let data = img
        .pixels()
        .iter()
        .map(|&p| {
            let v = (p as f64 + normal.sample(rng)).round();
            v.clamp(0.0, 255.0) as u8
        })
        .collect();
    GreyImage::new(img.width(), img.height(), data)
}

/// Draws the per-frame shift `X`, uniform over `{-1, 0, 1}`.
pub fn draw_walk_shift(rng: &mut impl Rng) -> i32 {
    rng.random_range(-1..=1)
}

/// Bounded random walk on the noise standard deviation.
///
/// Each advance adds a uniformly drawn shift from `{-1, 0, 1}` and clamps the
/// result to `[0, limit]`. Sequences start noise-free (`sigma = 0`).
#[derive(Debug, Clone)]
pub struct NoiseWalkState {
    sigma: f64,
    limit: f64,
    rng: SeededRng,
}

impl NoiseWalkState {
    pub fn new(limit: f64, seed: u64) -> Result<Self, ImageError> {
        Self::with_sigma(0.0, limit, seed)
    }

    pub fn with_sigma(sigma: f64, limit: f64, seed: u64) -> Result<Self, ImageError> {
        if !(limit.is_finite() && limit > 0.0) {
            return Err(ImageError::Argument(format!(
                "walk limit must be positive, got {limit}"
            )));
        }
        if !(0.0..=limit).contains(&sigma) {
            return Err(ImageError::Argument(format!(
                "initial sigma {sigma} outside [0, {limit}]"
            )));
        }
        Ok(Self {
            sigma,
            limit,
            rng: seeded_rng(seed),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    /// Applies a given shift without touching the generator.
    pub fn shifted(sigma: f64, limit: f64, shift: i32) -> f64 {
        (sigma + shift as f64).clamp(0.0, limit)
    }

    #[must_use]
    pub fn advance(mut self) -> Self {
        let shift = draw_walk_shift(&mut self.rng);
        self.sigma = Self::shifted(self.sigma, self.limit, shift);
        self
    }

    /// Draws Gaussian noise at the current level, using the walk's own generator.
    pub fn corrupt(&mut self, img: &GreyImage) -> GreyImage {
        let sigma = self.sigma;
        add_gaussian_noise(img, sigma, &mut self.rng).expect("walk sigma is always valid")
    }
}
