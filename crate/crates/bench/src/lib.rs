//! Fixtures shared by the benchmarks.

use fdtl::simgen::{generate_scenario, GeneratedScenario, ScenarioConfig};

/// The default simulation design with `num_sources` transferable sources.
pub fn scenario(n0: usize, num_sources: usize, seed: u64) -> GeneratedScenario {
    let cfg = ScenarioConfig { n0, num_sources, transferable_ids: (0..num_sources).collect(), seed, ..ScenarioConfig::default() };
    generate_scenario(&cfg).expect("default scenario is valid")
}
