//! FAST-9 on a noisy rendered frame, with and without the threshold
//! controller.
//!
//! ```text
//! cargo run --release --example fast_dynamic_threshold
//! ```

use microbot::features::{regulate, Detector, FastConfig, ThresholdMode};
use microbot::imaging::add_gaussian_noise;
use microbot::scenes::{generate_scene, SceneSpec};
use microbot::seeded_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = generate_scene(&SceneSpec::straight(12), &mut seeded_rng(1))?;
    let det = Detector::Fast(FastConfig::default());
    let mut rng = seeded_rng(2);

    for sigma in [0.0, 10.0, 30.0] {
        let mut state = det.threshold_state();
        print!("sigma {sigma:>4}: fixed t=50 finds {:>5}", det.detect(
            &add_gaussian_noise(&scene.frames[0], sigma, &mut rng)?,
            state.threshold,
        ).len());
        // the controller sees one frame at a time and carries its state forward
        let mut counts = Vec::new();
        for frame in &scene.frames {
            let noisy = add_gaussian_noise(frame, sigma, &mut rng)?;
            let (kps, next) = regulate(&det, &noisy, state, ThresholdMode::CarryForward);
            counts.push(kps.len());
            state = next;
        }
        println!(
            "; dynamic over {} frames: counts {:?}, final t={:.1}",
            counts.len(),
            counts,
            state.threshold
        );
    }
    Ok(())
}
