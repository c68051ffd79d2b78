//! Inference and scoring of one scene, shared by the CLI and the benchmark
//! harness.

use std::io::Write;
use std::path::Path;

use synaptrace_core::diagnostics::summarize_chain;
use synaptrace_core::evaluation::{match_catalogues, reconstruction_metrics, simulation_metrics, MetricsReport};
use synaptrace_core::model::{rasterize_displacement, render_all};
use synaptrace_core::sampler::{run_chain_observed, Progress};
use synaptrace_core::{Catalogue, Chain, ChainInit, IntensityField, ModelConfig, ObservationStack, PosteriorContext, SamplerConfig};

use crate::benchmark::chain_seed;
use crate::error::Result;
use crate::report::{MetricsDoc, SummaryDoc};
use crate::storage::{write_catalogue, write_chain, write_intensity, write_json, write_tensor, Tensor};

/// Chains plus pooled posterior estimates.
#[derive(Debug, Clone)]
pub struct Inference {
    pub chains: Vec<Chain>,
    /// Draw-weighted mean of the per-chain posterior means, each chain's
    /// labels aligned to chain 0 by optimal matching.
    pub mean: Catalogue,
    /// Foreground intensity averaged over all draws of all chains.
    pub intensity: Vec<IntensityField>,
}

/// Runs `num_chains` chains concurrently; chain `k` uses
/// `chain_seed(seed, k)`. With `progress`, one line per 100 iterations goes
/// to standard error.
pub fn infer(
    obs: &ObservationStack,
    config: &ModelConfig,
    sampler: &SamplerConfig,
    num_chains: usize,
    seed: u64,
    progress: bool,
) -> Result<Inference> {
    let ctx = PosteriorContext::new(obs.clone(), config.clone())?;
    let results: Vec<Result<Chain>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..num_chains.max(1))
            .map(|k| {
                let ctx = &ctx;
                let cfg = SamplerConfig { seed: chain_seed(seed, k), ..sampler.clone() };
                s.spawn(move || {
                    let mut report = |p: &Progress| {
                        if progress && (p.iteration.is_multiple_of(100) || p.iteration == p.total) {
                            eprintln!(
                                "chain {k}: {}/{} {} step {:.3e} accept {:.3} divergences {}",
                                p.iteration,
                                p.total,
                                if p.warmup { "warmup" } else { "sample" },
                                p.step_size,
                                p.accept_prob,
                                p.divergences
                            );
                            let _ = std::io::stderr().flush();
                        }
                    };
                    run_chain_observed(ctx, &cfg, &ChainInit::Auto, &mut report).map_err(Into::into)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    pool(chains, config)
}

/// Pools chains into one posterior-mean catalogue and intensity stack.
pub fn pool(chains: Vec<Chain>, config: &ModelConfig) -> Result<Inference> {
    let total: usize = chains.iter().map(Chain::len).sum();
    let reference = chains.first().ok_or(synaptrace_core::Error::EmptyChain)?.posterior_mean()?;
    let mut mean = Catalogue::zeros(reference.dim, reference.num_sources, reference.num_times);
    let mut intensity: Option<Vec<IntensityField>> = None;
    for chain in &chains {
        let w = chain.len() as f64 / total as f64;
        let m = chain.posterior_mean()?;
        let aligned = m.permuted(&match_catalogues(&reference, &m)?.assignment);
        for (a, b) in mean.positions.iter_mut().zip(&aligned.positions) {
            *a += w * b;
        }
        for (a, b) in mean.fluorescence.iter_mut().zip(&aligned.fluorescence) {
            *a += w * b;
        }
        for (a, b) in mean.momenta.iter_mut().zip(&aligned.momenta) {
            *a += w * b;
        }
        mean.background += w * aligned.background;
        let lam = chain.mean_intensity(config)?;
        match intensity.as_mut() {
            None => {
                intensity = Some(
                    lam.into_iter()
                        .map(|f| IntensityField { time_index: f.time_index, values: f.values.iter().map(|v| w * v).collect() })
                        .collect(),
                )
            }
            Some(acc) => {
                for (a, f) in acc.iter_mut().zip(&lam) {
                    a.values.iter_mut().zip(&f.values).for_each(|(x, v)| *x += w * v);
                }
            }
        }
    }
    Ok(Inference { chains, mean, intensity: intensity.unwrap_or_default() })
}

/// Writes `chain_XX/`, `posterior_mean.json`, `intensity.psvt`,
/// `displacement.psvt` (`[T, P, dim]`), `displacement_points.psvt`
/// (`[P, dim]`) and `summary.json` under `dir`.
pub fn write_inference(dir: &Path, inference: &Inference, config: &ModelConfig, stride: usize) -> Result<()> {
    for (k, chain) in inference.chains.iter().enumerate() {
        write_chain(&dir.join(format!("chain_{k:02}")), chain)?;
    }
    let mut mean_cfg = config.clone();
    mean_cfg.num_sources = inference.mean.num_sources;
    write_catalogue(&dir.join("posterior_mean.json"), &inference.mean, &mean_cfg)?;
    write_intensity(&dir.join("intensity.psvt"), &inference.intensity, &config.grid_shape)?;

    let d = config.dim;
    let fields = (0..config.num_times)
        .map(|t| rasterize_displacement(&inference.mean, t, config, stride))
        .collect::<synaptrace_core::Result<Vec<_>>>()?;
    let p = fields[0].sample_points.len();
    let points: Vec<f64> = fields[0].sample_points.iter().flat_map(|x| x[..d].to_vec()).collect();
    let vectors: Vec<f64> = fields.iter().flat_map(|f| f.vectors.iter().flat_map(|v| v[..d].to_vec())).collect();
    write_tensor(&dir.join("displacement_points.psvt"), &Tensor::from_f64(vec![p, d], points)?)?;
    write_tensor(&dir.join("displacement.psvt"), &Tensor::from_f64(vec![config.num_times, p, d], vectors)?)?;

    let summary = summarize_chain(&inference.chains)?;
    write_json(&dir.join("summary.json"), &SummaryDoc::from(&summary))
}

/// Simulation metrics against `truth` merged with reconstruction metrics
/// against the counts. Without `est_intensity` the estimate is rendered.
pub fn evaluate(
    truth: &Catalogue,
    truth_config: &ModelConfig,
    est: &Catalogue,
    est_config: &ModelConfig,
    est_intensity: Option<&[IntensityField]>,
    obs: &ObservationStack,
) -> Result<MetricsReport> {
    let rendered;
    let est_intensity = match est_intensity {
        Some(f) => f,
        None => {
            rendered = render_all(est, est_config)?;
            &rendered
        }
    };
    let truth_intensity = render_all(truth, truth_config)?;
    let sim = simulation_metrics(truth, est, est_intensity, &truth_intensity, obs, truth_config)?;
    let rec = reconstruction_metrics(est_intensity, est.background, obs, None)?;
    Ok(sim.merge(&rec))
}

pub fn write_metrics(path: &Path, metrics: &MetricsReport) -> Result<()> {
    write_json(path, &MetricsDoc::from(metrics))
}
