//! Independent scenario runs fanned out across seeds.
//!
//! With the `parallel` feature the runs execute on the rayon pool; results
//! are returned in seed order either way and are identical between the two
//! paths.

use std::collections::HashMap;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::scenarios::config::SimConfig;
use crate::scenarios::{run_scenario_with_env, SimError, SimReport};

fn run_one(base: &SimConfig, seed: u64, env: &HashMap<String, String>) -> Result<SimReport, SimError> {
    let mut config = base.clone();
    config.seed = seed;
    run_scenario_with_env(config, env).map(|out| out.report)
}

pub fn run_seeds_sequential(
    base: &SimConfig,
    seeds: &[u64],
    env: &HashMap<String, String>,
) -> Vec<Result<SimReport, SimError>> {
    seeds.iter().map(|&s| run_one(base, s, env)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_seeds_parallel(
    base: &SimConfig,
    seeds: &[u64],
    env: &HashMap<String, String>,
) -> Vec<Result<SimReport, SimError>> {
    seeds.par_iter().map(|&s| run_one(base, s, env)).collect()
}

pub fn run_seeds(base: &SimConfig, seeds: &[u64], env: &HashMap<String, String>) -> Vec<Result<SimReport, SimError>> {
    #[cfg(feature = "parallel")]
    return run_seeds_parallel(base, seeds, env);
    #[cfg(not(feature = "parallel"))]
    return run_seeds_sequential(base, seeds, env);
}

/// Fraction of platforms, over all reports, whose final interval equals `target_s`.
pub fn converged_fraction(reports: &[SimReport], target_s: u32) -> f64 {
    let total: usize = reports.iter().map(|r| r.platforms.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let hits = reports
        .iter()
        .flat_map(|r| &r.platforms)
        .filter(|p| p.final_sampling_interval_s == target_s)
        .count();
    hits as f64 / total as f64
}
