//! Shared fixtures for the kernel benchmarks.

use calderon::config::RunConfig;
use calderon::geometry::Mesh;

/// Default configuration on a coarser mesh so a single iteration stays well under a second.
pub fn bench_config() -> RunConfig {
    RunConfig::from_toml_str("[geometry]\ndisk_rings = 4\nx1_cells = 8\n").expect("bench configuration is valid")
}

pub fn bench_mesh() -> Mesh {
    bench_config().geometry.build_mesh().expect("bench mesh builds")
}
