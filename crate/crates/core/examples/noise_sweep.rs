//! Fixed vs dynamic threshold error ratios over static noise levels on the
//! bundled sequence.
//!
//! ```text
//! cargo run --release --example noise_sweep [-- SEEDS JOBS]
//! ```

use microbot::features::{Detector, FastConfig};
use microbot::odometry::{noise_sweep, ratio_table, NoiseSpec, SweepConfig, VoConfig};
use microbot::scenes::bundled_scene;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seeds = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let jobs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let scene = bundled_scene()?;
    let cfg = SweepConfig {
        sequence: "bundled".into(),
        detectors: vec![Detector::Fast(FastConfig::default())],
        noise: [5.0, 20.0, 40.0].map(|sigma| NoiseSpec::Static { sigma }).to_vec(),
        seeds,
        master_seed: 0,
        jobs,
        base: VoConfig::default(),
    };
    let rows = noise_sweep(&scene.frames, &scene.gt, &scene.intrinsics, &cfg)?;
    println!("{:>6} {:>12} {:>12}", "sigma", "mse fix/dyn", "mee fix/dyn");
    for r in ratio_table(&rows) {
        println!("{:>6} {:>12.3} {:>12.3}", r.noise, r.ratio_mse, r.ratio_mee);
    }
    Ok(())
}
