//! MAC and parameter accounting for the three published width multipliers,
//! compared against the reference totals.
//!
//! ```text
//! cargo run --example microbotnet_macs [-- --multiplies]
//! ```

use microbot::micronet::{build_microbotnet, count_macs, MacConvention};

const PUBLISHED: [(f64, u64, u64); 3] = [
    (0.25, 697_662, 160_162),
    (0.32, 932_886, 236_658),
    (1.00, 6_597_218, 2_044_298),
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let convention = if std::env::args().any(|a| a == "--multiplies") {
        MacConvention::Multiplies
    } else {
        MacConvention::Thop
    };

    for (alpha, macs, params) in PUBLISHED {
        let report = count_macs(&build_microbotnet(alpha, 10)?, convention);
        println!("MicroBotNet x{alpha:.2} ({} convention)", convention.name());
        print!("{}", report.to_table());
        let rel = |ours: u64, theirs: u64| 100.0 * (ours as f64 - theirs as f64) / theirs as f64;
        println!(
            "published  {macs:>10} MACs {params:>10} params   deviation {:+.2}% / {:+.2}%\n",
            rel(report.total_macs, macs),
            rel(report.total_params, params)
        );
    }
    Ok(())
}
