//! Synthetic benchmark grids over `(I, T)`.

use std::path::Path;

use synaptrace_core::simulator::{sample_catalogue, simulate_observations};
use synaptrace_core::{Catalogue, ModelConfig, ObservationStack};

use crate::error::{Error, Result};
use crate::storage::manifest::MANIFEST_VERSION;
use crate::storage::{write_catalogue, write_manifest, write_observations, BenchmarkManifest, RunEntry};

/// Mixes `stream` into `seed` (splitmix64). For a fixed `seed` the map
/// `stream -> derived` is a bijection, so run seeds never collide.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for chain `k` of a run seeded with `seed`.
pub fn chain_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, 1000 + k as u64)
}

/// The run list without touching the filesystem.
pub fn plan_benchmark(
    sources: &[usize],
    times: &[usize],
    replicates: usize,
    base_seed: u64,
    base: &ModelConfig,
) -> Result<BenchmarkManifest> {
    if sources.is_empty() || times.is_empty() || replicates == 0 {
        return Err(Error::Config("benchmark needs nonempty source and time lists and replicates >= 1".into()));
    }
    let mut runs = Vec::with_capacity(sources.len() * times.len() * replicates);
    for &i in sources {
        for &t in times {
            for rep in 0..replicates {
                let id = format!("I{i}_T{t}_r{rep:03}");
                let seed = derive_seed(base_seed, runs.len() as u64);
                runs.push(RunEntry {
                    truth: format!("runs/{id}/truth.json"),
                    observations: format!("runs/{id}/observations.psvt"),
                    id,
                    num_sources: i,
                    num_times: t,
                    grid_shape: base.grid_shape.clone(),
                    seed,
                    results: None,
                });
            }
        }
    }
    Ok(BenchmarkManifest {
        version: MANIFEST_VERSION,
        base_seed,
        replicates,
        sources: sources.to_vec(),
        times: times.to_vec(),
        config: base.into(),
        runs,
    })
}

/// Model configuration of one run.
pub fn run_config(base: &ModelConfig, run: &RunEntry) -> ModelConfig {
    ModelConfig { num_sources: run.num_sources, num_times: run.num_times, grid_shape: run.grid_shape.clone(), ..base.clone() }
}

/// Ground truth and observations of one run.
pub fn simulate_run(base: &ModelConfig, run: &RunEntry) -> Result<(Catalogue, ObservationStack, ModelConfig)> {
    let config = run_config(base, run);
    let truth = sample_catalogue(&config, derive_seed(run.seed, 0))?;
    let obs = simulate_observations(&truth, &config, derive_seed(run.seed, 1))?;
    Ok((truth, obs, config))
}

/// Simulates every run and writes `out_dir/manifest.json` plus
/// `out_dir/runs/<id>/{truth.json, observations.psvt}`.
pub fn build_benchmark(
    sources: &[usize],
    times: &[usize],
    replicates: usize,
    base_seed: u64,
    base: &ModelConfig,
    out_dir: &Path,
) -> Result<BenchmarkManifest> {
    let manifest = plan_benchmark(sources, times, replicates, base_seed, base)?;
    for run in &manifest.runs {
        let (truth, obs, config) = simulate_run(base, run)?;
        write_catalogue(&out_dir.join(&run.truth), &truth, &config)?;
        write_observations(&out_dir.join(&run.observations), &obs)?;
    }
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
