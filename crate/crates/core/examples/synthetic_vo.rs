//! Monocular VO on the bundled synthetic sequence, scored against exact
//! ground truth.
//!
//! ```text
//! cargo run --release --example synthetic_vo [-- SIGMA]
//! ```

use microbot::odometry::{run_vo, trajectory_error, Metric, NoiseSpec, VoConfig};
use microbot::scenes::bundled_scene;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sigma: f64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0.0);
    let scene = bundled_scene()?;
    println!(
        "{} frames, path length {:.1}, sigma {sigma}",
        scene.frames.len(),
        scene.gt.path_length()
    );
    for dynamic in [false, true] {
        let cfg = VoConfig {
            dynamic,
            noise: NoiseSpec::Static { sigma },
            ..Default::default()
        };
        let rep = run_vo(&scene.frames, &scene.gt, &scene.intrinsics, &cfg)?;
        let mse = trajectory_error(&rep.trajectory, &scene.gt, Metric::Mse)?;
        let mee = trajectory_error(&rep.trajectory, &scene.gt, Metric::Mee)?;
        let end = rep.trajectory.positions.last().unwrap();
        println!(
            "{:<8} mse {mse:.4}  mee {mee:.4}  degenerate {:>2}  end ({:+.2}, {:+.2}, {:+.2})",
            if dynamic { "dynamic" } else { "fixed" },
            rep.degenerate_frames,
            end.x,
            end.y,
            end.z
        );
    }
    let gt_end = scene.gt.positions.last().unwrap();
    println!("truth    end ({:+.2}, {:+.2}, {:+.2})", gt_end.x, gt_end.y, gt_end.z);
    Ok(())
}
