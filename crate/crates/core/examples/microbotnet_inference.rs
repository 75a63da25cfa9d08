//! Random-weight MicroBotNet inference and the weight bundle format.
//!
//! ```text
//! cargo run --release --example microbotnet_inference [-- OUT_DIR]
//! ```
//!
//! The saved bundle and image can be fed to `micro net infer`.

use microbot::imaging::{save_pgm, GreyImage};
use microbot::micronet::{build_microbotnet, forward, load_weights, save_weights, softmax, WeightBundle};
use microbot::seeded_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("microbot_net"));
    let spec = build_microbotnet(0.25, 10)?;
    let weights = WeightBundle::random(&spec, &mut seeded_rng(1));
    println!("MicroBotNet x0.25: {} weight values", weights.num_values());

    let img = GreyImage::from_fn(32, 32, |x, y| if (x / 4 + y / 4) % 2 == 0 { 220 } else { 30 });
    let grey = img.to_f32().into_iter().map(|v| v / 255.0).collect::<Vec<_>>();
    let input: Vec<f32> = (0..3).flat_map(|_| grey.iter().copied()).collect();
    let logits = forward(&spec, &weights, &input)?;
    let probs = softmax(&logits);
    println!("logits {logits:.3?}");
    println!("softmax {probs:.3?} (sum {:.6})", probs.iter().sum::<f64>());

    std::fs::create_dir_all(&dir)?;
    let manifest = dir.join("weights.txt");
    save_weights(&weights, &manifest)?;
    let back = load_weights(&spec, &manifest)?;
    assert_eq!(forward(&spec, &back, &input)?, logits);
    save_pgm(&img, dir.join("checker.pgm"))?;
    println!("wrote {} and checker.pgm", manifest.display());
    Ok(())
}
