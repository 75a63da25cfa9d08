//! k-means distillation of a random-policy transition dataset, compared with
//! a uniform random subset of the same size.
//!
//! ```text
//! cargo run --release --example kmeans_filter
//! ```

use microbot::locomotion::{fig4_data, kmeans_filter, train_dynamics, TrainConfig};
use microbot::seeded_rng;
use rand::seq::index::sample;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (pool, val) = fig4_data(3000, 800, 0)?;
    let k = 600;
    let (kept, _, km) = kmeans_filter(&pool, k, &mut seeded_rng(1))?;
    println!(
        "{} -> {} transitions, {} Lloyd iterations, objective {:.1} -> {:.1}",
        pool.len(),
        kept.len(),
        km.iterations,
        km.objective[0],
        km.objective.last().unwrap()
    );
    let mut idx = sample(&mut seeded_rng(2), pool.len(), k).into_vec();
    idx.sort_unstable();
    let random = pool.select(&idx);

    let cfg = TrainConfig::default();
    for (name, data) in [("kmeans", &kept), ("random", &random), ("full", &pool)] {
        let scores: Vec<f64> = (0..3)
            .map(|m| train_dynamics(data, &val, m, &cfg).map(|r| r.1))
            .collect::<Result<_, _>>()?;
        println!("{name:<7} validation mse {:.4} (3 models)", scores.iter().sum::<f64>() / 3.0);
    }
    Ok(())
}
