//! The model-based RL loop: fit a dynamics network, plan with random
//! shooting, collect on-policy data and distill the dataset with k-means.
//!
//! ```text
//! cargo run --release --example mbrl_loop [-- ITERATIONS]
//! ```

use microbot::locomotion::{evaluate_policy, fig4_data, mbrl_iteration, random_policy, MbrlConfig, MpcConfig};
use microbot::seeded_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iters = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let cfg = MbrlConfig {
        mpc: MpcConfig {
            samples: 200,
            ..Default::default()
        },
        eval_episodes: 5,
        ..Default::default()
    };
    let (mut data, val) = fig4_data(500, 800, 0)?;
    let random = evaluate_policy(random_policy, cfg.eval_episodes, cfg.episode_length, &mut seeded_rng(9));
    println!("random policy: mean episode reward {:.3}", random.mean_reward);
    for i in 0..iters {
        let (next, _, m) = mbrl_iteration(&data, &val, 500, i, &cfg)?;
        println!(
            "iteration {i}: val mse {:.4}  MPC reward {:.3}  dataset {} -> {}",
            m.val_mse, m.mean_episode_reward, m.size_before_filter, m.size_after_filter
        );
        data = next;
    }
    Ok(())
}
