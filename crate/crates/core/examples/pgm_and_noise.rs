//! PGM round trip, Gaussian sensor noise and the bounded noise random walk.

use microbot::imaging::{add_gaussian_noise, decode_pgm, encode_pgm, GreyImage, NoiseWalkState};
use microbot::seeded_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let img = GreyImage::from_fn(64, 48, |x, y| ((x * 4 + y * 2) % 256) as u8);
    let bytes = encode_pgm(&img);
    assert_eq!(decode_pgm(&bytes)?, img);
    println!("64x48 ramp: {} bytes as binary PGM, round trip exact", bytes.len());

    let flat = GreyImage::filled(128, 128, 128);
    let mut rng = seeded_rng(7);
    for sigma in [0.0, 5.0, 20.0, 40.0] {
        let noisy = add_gaussian_noise(&flat, sigma, &mut rng)?;
        let px: Vec<f64> = noisy.pixels().iter().map(|&v| v as f64).collect();
        let mean = px.iter().sum::<f64>() / px.len() as f64;
        let sd = (px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / px.len() as f64).sqrt();
        println!("sigma {sigma:>4}: measured std {sd:6.2}");
    }

    let mut walk = NoiseWalkState::new(10.0, 3)?;
    let mut trace = Vec::new();
    for _ in 0..30 {
        trace.push(walk.sigma());
        walk = walk.advance();
    }
    println!("random walk, limit 10: {trace:?}");
    Ok(())
}
