//! Simulation model and the Monte Carlo benchmark built on it.

pub mod bench;
pub mod model;

pub use bench::{
    default_ise_grid, ise, ise_against, pointwise_sq_errors, replicate_raw, run_benchmark,
    run_cell, truth_on_grid, BenchConfig, BenchResult, BenchRow, TABLE_BANDWIDTHS,
};
pub use model::{
    cov_scale, generate, generate_repeated, generate_repeated_replicate, generate_replicate,
    true_corr, true_cov, true_mean, RepeatDesign, SimConfig, SpreadReading, VcmSimConfig,
};
