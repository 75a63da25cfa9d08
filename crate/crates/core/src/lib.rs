//! # microbot
//!
//! A desk-scale workbench for three autonomy building blocks of very small
//! robots:
//!
//! - **Navigation**: FAST corner detection with a feedback-controlled
//!   threshold ("dynamic thresholding"), a learned sparse linear keypoint
//!   detector (Leaky-SLIPD), and a monocular visual-odometry pipeline that is
//!   evaluated against exact synthetic ground truth under injected sensor
//!   noise. See [`imaging`], [`features`], [`scenes`] and [`odometry`].
//! - **Classification**: the MicroBotNet architecture, exact integer
//!   MAC/parameter accounting and hard-activation inference. See [`micronet`].
//! - **Locomotion**: a model-based RL loop on simulated attitude dynamics
//!   with k-means dataset filtering and random-shooting MPC. See
//!   [`locomotion`].
//!
//! ## Examples
//!
//! Every major capability has a runnable example under `crates/core/examples/`:
//!
//! ```text
//! pgm_and_noise            PGM round trip, Gaussian noise, noise random walk
//! fast_dynamic_threshold   FAST-9 on a noisy frame with the threshold controller
//! slipd_training           mine correspondence pairs, train and export a SLIPD model
//! synthetic_vo             run VO on a rendered scene and score the trajectory
//! noise_sweep              fixed vs dynamic threshold error ratios over noise levels
//! kitti_export             export a scene in KITTI layout and load it back
//! microbotnet_macs         per-layer MAC/parameter ledger for the width multipliers
//! microbotnet_inference    random-weight inference, weight bundle save/load
//! kmeans_filter            cluster-based dataset distillation on simulated transitions
//! mbrl_loop                the train / plan / collect / filter loop
//! ```
//!
//! ```bash
//! cargo run --release -p microbot --example synthetic_vo
//! ```
//!
//! A thin `micro` binary exposes the same operations as reproducible
//! experiments writing CSV/JSON (see [`cli`]).
//!
//! ## Randomness
//!
//! All stochastic operations take an explicit generator. The crate-wide
//! generator is [`SeededRng`] (ChaCha with 8 rounds, seeded from a `u64`), so
//! every result is reproducible from a master seed.

pub mod cli;
pub mod features;
pub mod imaging;
pub mod locomotion;
pub mod micronet;
pub mod odometry;
pub mod scenes;

/// The generator used for every stochastic operation in the crate.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Builds a [`SeededRng`] from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

/// Derives an independent child seed from a master seed and a stream path.
///
/// Used to give each sweep cell its own generator so results do not depend on
/// execution order.
pub fn derive_seed(master: u64, stream: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ 0x6a09_e667_f3bc_c908);
    for &s in stream {
        h = splitmix64(h ^ splitmix64(s.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
