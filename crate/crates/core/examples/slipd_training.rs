//! Mine correspondence patches from a rendered scene, train a sparse linear
//! detector and export it.
//!
//! ```text
//! cargo run --release --example slipd_training [-- model.txt]
//! ```

use microbot::features::{slipd_detect, slipd_train, SlipdModel, SlipdTrainConfig};
use microbot::scenes::{generate_scene, mine_pairs, SceneSpec};
use microbot::seeded_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = generate_scene(&SceneSpec::straight(20), &mut seeded_rng(1))?;
    let pairs = mine_pairs(&scene.observations, &scene.frames, 5, 10_000, &mut seeded_rng(2))?;
    println!("mined {} co-visible 5x5 patch pairs", pairs.len());

    let (model, report) = slipd_train(&pairs, &SlipdModel::default(), &SlipdTrainConfig::default(), &mut seeded_rng(3))?;
    println!(
        "loss {:.4} -> {:.4}, {} non-zero weights, |w| = {:.3}",
        report.initial_loss,
        report.final_loss,
        model.nonzeros(),
        model.norm()
    );
    for row in model.weights.chunks(model.block) {
        println!("  {}", row.iter().map(|w| format!("{w:+.3}")).collect::<Vec<_>>().join(" "));
    }
    for tau in [0.2, 0.4, 0.8] {
        println!("tau {tau}: {} keypoints on frame 0", slipd_detect(&model, &scene.frames[0], tau).len());
    }

    if let Some(path) = std::env::args().nth(1) {
        model.save(&path)?;
        assert_eq!(SlipdModel::load(&path)?.weights, model.weights);
        println!("saved to {path}");
    }
    Ok(())
}
