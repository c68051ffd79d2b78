//! Run configuration: built-in defaults, then a JSON file, then flags.
//!
//! ```json
//! {
//!   "seed": 1, "out": "results", "chains": 1, "displacement_stride": 4,
//!   "model": {"dim": 2, "grid_shape": [64, 64], "num_sources": 2, "num_times": 4,
//!             "psf_cov": [[10, -2], [-2, 15]], "motion_cov": [[9, 0], [0, 9]],
//!             "fluor_scale": 200, "background_scale": 5, "kernel_bandwidth": 10},
//!   "sampler": {"warmup_iters": 1000, "sample_iters": 1000, "target_accept": 0.9,
//!               "leapfrog_steps": null, "max_leapfrog_steps": 64,
//!               "init_step_size": 0.1, "mass_adapt_window": 25},
//!   "benchmark": {"sources": [2, 4, 8], "times": [4, 6, 8, 10], "replicates": 1}
//! }
//! ```
//!
//! Every key is optional and unknown keys are rejected. `benchmark.sources`
//! and `benchmark.times` take precedence over `model.num_sources` and
//! `model.num_times`; the first entry of each list is the single-scene
//! value.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use synaptrace_core::{ModelConfig, SamplerConfig, SpdMatrix};

use crate::error::{Error, Result};
use crate::storage::read_bytes;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: Option<usize>,
    pub grid_shape: Option<Vec<usize>>,
    pub num_sources: Option<usize>,
    pub num_times: Option<usize>,
    pub psf_cov: Option<Vec<Vec<f64>>>,
    pub motion_cov: Option<Vec<Vec<f64>>>,
    pub fluor_scale: Option<f64>,
    pub background_scale: Option<f64>,
    pub kernel_bandwidth: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub warmup_iters: Option<usize>,
    pub sample_iters: Option<usize>,
    pub target_accept: Option<f64>,
    pub leapfrog_steps: Option<usize>,
    pub max_leapfrog_steps: Option<usize>,
    pub init_step_size: Option<f64>,
    pub mass_adapt_window: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub sources: Option<Vec<usize>>,
    pub times: Option<Vec<usize>>,
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub chains: Option<usize>,
    pub displacement_stride: Option<usize>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub benchmark: BenchmarkSection,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sources: Option<Vec<usize>>,
    pub times: Option<Vec<usize>>,
    pub grid: Option<usize>,
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub samples: Option<usize>,
    pub target_accept: Option<f64>,
    pub leapfrog_steps: Option<usize>,
    pub replicates: Option<usize>,
}

/// Fully merged and validated settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub chains: usize,
    pub displacement_stride: usize,
    /// `num_sources`/`num_times` hold the first entries of `sources`/`times`.
    pub model: ModelConfig,
    /// `seed` is unset here; chains derive their own.
    pub sampler: SamplerConfig,
    pub sources: Vec<usize>,
    pub times: Vec<usize>,
    pub replicates: usize,
}

pub const DEFAULT_GRID: usize = 64;

fn matrix(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<SpdMatrix> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!("model.{what} must be a {dim}x{dim} matrix")));
    }
    SpdMatrix::new(dim, &rows.concat()).map_err(|e| Error::Config(format!("model.{what}: {e}")))
}

impl RunConfig {
    pub fn resolve(file: Option<&ConfigFile>, flags: &Overrides) -> Result<Self> {
        let empty = ConfigFile::default();
        let file = file.unwrap_or(&empty);
        let m = &file.model;
        let dim = m.dim.unwrap_or(2);
        if !(2..=3).contains(&dim) {
            return Err(Error::Config(format!("model.dim must be 2 or 3, got {dim}")));
        }
        let bench = ModelConfig::benchmark_2d(DEFAULT_GRID, 2, 4);
        let cov = |given: &Option<Vec<Vec<f64>>>, fallback: &SpdMatrix, what: &str| match given {
            Some(rows) => matrix(rows, dim, what),
            None if dim == 2 => Ok(*fallback),
            None => Err(Error::Config(format!("model.{what} is required when dim = 3"))),
        };
        let grid_shape = match (flags.grid, &m.grid_shape) {
            (Some(n), _) => vec![n; dim],
            (None, Some(g)) => g.clone(),
            (None, None) => vec![DEFAULT_GRID; dim],
        };
        let b = &file.benchmark;
        let sources = flags
            .sources
            .clone()
            .or_else(|| b.sources.clone())
            .or_else(|| m.num_sources.map(|i| vec![i]))
            .unwrap_or_else(|| vec![2]);
        let times = flags
            .times
            .clone()
            .or_else(|| b.times.clone())
            .or_else(|| m.num_times.map(|t| vec![t]))
            .unwrap_or_else(|| vec![4]);
        if sources.is_empty() || times.is_empty() {
            return Err(Error::Config("source and time lists must be nonempty".into()));
        }
        let model = ModelConfig {
            dim,
            grid_shape,
            num_sources: sources[0],
            num_times: times[0],
            psf_cov: cov(&m.psf_cov, &bench.psf_cov, "psf_cov")?,
            motion_cov: cov(&m.motion_cov, &bench.motion_cov, "motion_cov")?,
            fluor_scale: m.fluor_scale.unwrap_or(bench.fluor_scale),
            background_scale: m.background_scale.unwrap_or(bench.background_scale),
            kernel_bandwidth: m.kernel_bandwidth.unwrap_or(bench.kernel_bandwidth),
        };
        model.validate().map_err(|e| Error::Config(e.to_string()))?;
        for &t in &times {
            ModelConfig { num_times: t, ..model.clone() }.validate().map_err(|e| Error::Config(e.to_string()))?;
        }

        let s = &file.sampler;
        let d = SamplerConfig::default();
        let sampler = SamplerConfig {
            warmup_iters: flags.warmup.or(s.warmup_iters).unwrap_or(d.warmup_iters),
            sample_iters: flags.samples.or(s.sample_iters).unwrap_or(d.sample_iters),
            target_accept: flags.target_accept.or(s.target_accept).unwrap_or(d.target_accept),
            leapfrog_steps: flags.leapfrog_steps.or(s.leapfrog_steps),
            max_leapfrog_steps: s.max_leapfrog_steps.unwrap_or(d.max_leapfrog_steps),
            init_step_size: s.init_step_size.unwrap_or(d.init_step_size),
            mass_adapt_window: s.mass_adapt_window.unwrap_or(d.mass_adapt_window),
            seed: 0,
        };
        sampler.validate().map_err(|e| Error::Config(e.to_string()))?;

        let chains = flags.chains.or(file.chains).unwrap_or(1);
        let displacement_stride = file.displacement_stride.unwrap_or(4);
        let replicates = flags.replicates.or(b.replicates).unwrap_or(1);
        if chains == 0 {
            return Err(Error::Config("chains must be >= 1".into()));
        }
        if displacement_stride == 0 {
            return Err(Error::Config("displacement_stride must be >= 1".into()));
        }
        if replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        Ok(Self {
            seed: flags.seed.or(file.seed).unwrap_or(0),
            out: flags.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            chains,
            displacement_stride,
            model,
            sampler,
            sources,
            times,
            replicates,
        })
    }

    pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let file = path.map(ConfigFile::read).transpose()?;
        Self::resolve(file.as_ref(), flags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_benchmark_setup() {
        let rc = RunConfig::resolve(None, &Overrides::default()).unwrap();
        assert_eq!(rc.model, ModelConfig::benchmark_2d(64, 2, 4));
        assert_eq!(rc.sampler.warmup_iters, 1000);
        assert_eq!(rc.sampler.target_accept, 0.9);
    }

    #[test]
    fn flags_win_over_file() {
        let file: ConfigFile =
            serde_json::from_str(r#"{"seed": 3, "model": {"grid_shape": [32, 40]}, "sampler": {"warmup_iters": 10}}"#)
                .unwrap();
        let flags = Overrides { seed: Some(9), warmup: Some(20), ..Default::default() };
        let rc = RunConfig::resolve(Some(&file), &flags).unwrap();
        assert_eq!((rc.seed, rc.sampler.warmup_iters), (9, 20));
        assert_eq!(rc.model.grid_shape, vec![32, 40]);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(serde_json::from_str::<ConfigFile>(r#"{"sampler": {"warmup": 10}}"#).is_err());
        let bad = Overrides { target_accept: Some(1.5), ..Default::default() };
        assert!(matches!(RunConfig::resolve(None, &bad), Err(Error::Config(_))));
        let file: ConfigFile = serde_json::from_str(r#"{"model": {"dim": 3}}"#).unwrap();
        assert!(matches!(RunConfig::resolve(Some(&file), &Overrides::default()), Err(Error::Config(_))));
    }
}
