//! Export a rendered scene in KITTI odometry layout and read it back.
//!
//! ```text
//! cargo run --example kitti_export [-- OUT_DIR]
//! ```

use microbot::odometry::{trajectory_error, Metric};
use microbot::scenes::{export_kitti, generate_scene, load_kitti, SceneSpec};
use microbot::seeded_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("microbot_kitti"));
    let scene = generate_scene(&SceneSpec::straight(10), &mut seeded_rng(1))?;
    export_kitti(&scene, &dir)?;

    let seq = load_kitti(&dir)?;
    let frames = seq.load_frames()?;
    println!("{}: {} frames, intrinsics {:?}", dir.display(), frames.len(), seq.intrinsics);
    assert_eq!(frames, scene.frames);
    let drift = trajectory_error(&seq.trajectory(), &scene.gt, Metric::Mee)?;
    println!("pose round trip error {drift:.2e}");
    println!("{} world points restored", seq.points.as_ref().map_or(0, Vec::len));
    Ok(())
}
