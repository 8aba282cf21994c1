//! Many independent simulations at once.

use crate::scenario::{simulate, SimConfig, SimError, SimulationReport};

/// Runs every configuration; results come back in input order.
#[cfg(feature = "parallel")]
pub fn run_batch(configs: Vec<SimConfig>) -> Vec<Result<SimulationReport, SimError>> {
    use rayon::prelude::*;
    configs.into_par_iter().map(simulate).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_batch(configs: Vec<SimConfig>) -> Vec<Result<SimulationReport, SimError>> {
    configs.into_iter().map(simulate).collect()
}
