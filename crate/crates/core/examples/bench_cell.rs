//! Runs one benchmark cell and prints the per-bandwidth log mean ISE.
//!
//! `cargo run --release -p dyncov --example bench_cell -- 20 250 100 [seed]`

use dyncov::sim::{run_cell, BenchConfig};
use dyncov::Estimator;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: u64| args.get(i).map_or(Ok(default), |s| s.parse());
    let p = arg(0, 20)? as usize;
    let n = arg(1, 250)? as usize;
    let replicates = arg(2, 100)? as usize;
    let seed = arg(3, 1)?;
    let config = BenchConfig {
        estimators: Estimator::ALL.to_vec(),
        replicates,
        seed,
        ..BenchConfig::default()
    };
    let start = std::time::Instant::now();
    for row in run_cell(&config, p, n)? {
        let per_h: Vec<String> = row
            .bandwidths
            .iter()
            .zip(&row.mean_ise)
            .map(|(h, m)| format!("{h}:{:.2}", m.ln()))
            .collect();
        println!(
            "{:>4} {:.3} ({}) {}",
            row.estimator,
            row.log_mean_ise,
            row.best_bandwidth,
            per_h.join(" ")
        );
    }
    eprintln!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
