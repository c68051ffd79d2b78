//! `synaptrace` subcommands.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
//! (files, numerics, failed gradient check).

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use synaptrace_core::diagnostics::summarize_chain;
use synaptrace_core::ModelConfig;

use crate::benchmark::{build_benchmark, derive_seed};
use crate::config::{Overrides, RunConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{max_gradient_error, TOLERANCE};
use crate::pipeline::{evaluate, infer, write_inference, write_metrics};
use crate::report::{format_table1, table1, MetricsDoc, SummaryDoc};
use crate::storage::{
    read_catalogue, read_chain, read_intensity, read_json, read_manifest, read_observations, resolve, write_atomic,
    write_json, write_manifest,
};

#[derive(Debug, Parser)]
#[command(name = "synaptrace", version, about = "Bayesian tracking of fluorescent point sources in Poisson image stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample ground truth and observations over an (I, T) grid.
    Simulate(SimulateArgs),
    /// Run HMC chains on an observation stack or on every manifest run.
    Infer(InferArgs),
    /// Score estimates against truth and counts.
    Evaluate(EvaluateArgs),
    /// Compare the analytic gradient with central differences.
    Gradcheck(GradcheckArgs),
    /// Aggregate metrics into median [25th, 75th] rows, or summarize chains.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Source counts, comma separated.
    #[arg(long = "I", value_delimiter = ',')]
    sources: Option<Vec<usize>>,
    /// Time-point counts, comma separated.
    #[arg(long = "T", value_delimiter = ',')]
    times: Option<Vec<usize>>,
    /// Grid edge length in voxels, applied to every axis.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long = "target-accept")]
    target_accept: Option<f64>,
    #[arg(long = "leapfrog-steps")]
    leapfrog_steps: Option<usize>,
}

impl CommonArgs {
    fn resolve(&self, replicates: Option<usize>) -> Result<RunConfig> {
        let flags = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            sources: self.sources.clone(),
            times: self.times.clone(),
            grid: self.grid,
            chains: self.chains,
            warmup: self.warmup,
            samples: self.samples,
            target_accept: self.target_accept,
            leapfrog_steps: self.leapfrog_steps,
            replicates,
        };
        RunConfig::load(self.config.as_deref(), &flags)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Observation tensor of shape [T, grid...].
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    obs: Option<PathBuf>,
    /// Take the model configuration from this catalogue file.
    #[arg(long, requires = "obs")]
    truth: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Restrict manifest mode to these run ids, comma separated.
    #[arg(long, value_delimiter = ',', requires = "manifest")]
    runs: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, requires_all = ["estimate", "obs"], conflicts_with = "manifest")]
    truth: Option<PathBuf>,
    #[arg(long)]
    estimate: Option<PathBuf>,
    #[arg(long)]
    obs: Option<PathBuf>,
    /// Estimated foreground intensity [T, grid...]; rendered from the
    /// estimate when absent.
    #[arg(long)]
    intensity: Option<PathBuf>,
    #[arg(long, required_unless_present = "truth")]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Random states to check.
    #[arg(long, default_value_t = 20)]
    states: usize,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, required_unless_present = "chain")]
    manifest: Option<PathBuf>,
    /// Chain directories to summarize jointly.
    #[arg(long, num_args = 1.., conflicts_with = "manifest")]
    chain: Vec<PathBuf>,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Summarize(a) => summarize(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let rc = a.common.resolve(a.replicates)?;
    let m = build_benchmark(&rc.sources, &rc.times, rc.replicates, rc.seed, &rc.model, &rc.out)?;
    eprintln!("wrote {} runs to {}", m.runs.len(), rc.out.join("manifest.json").display());
    Ok(())
}

/// Model configuration for observations without an accompanying catalogue.
fn config_for(obs: &synaptrace_core::ObservationStack, rc: &RunConfig) -> Result<ModelConfig> {
    if obs.grid_shape.len() != rc.model.dim {
        return Err(Error::Config(format!(
            "observations are {}-D but the configuration is {}-D",
            obs.grid_shape.len(),
            rc.model.dim
        )));
    }
    Ok(ModelConfig { grid_shape: obs.grid_shape.clone(), num_times: obs.num_times, ..rc.model.clone() })
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let rc = a.common.resolve(None)?;
    if let Some(obs_path) = &a.obs {
        let obs = read_observations(obs_path)?;
        let config = match &a.truth {
            Some(t) => read_catalogue(t)?.1,
            None => config_for(&obs, &rc)?,
        };
        obs.check_against(&config)?;
        let result = infer(&obs, &config, &rc.sampler, rc.chains, rc.seed, true)?;
        return write_inference(&rc.out, &result, &config, rc.displacement_stride);
    }
    let manifest_path = a.manifest.as_ref().expect("clap enforces --obs or --manifest");
    let mut manifest = read_manifest(manifest_path)?;
    for run in manifest.runs.iter_mut() {
        if a.runs.as_ref().is_some_and(|ids| !ids.contains(&run.id)) {
            continue;
        }
        let (_, config) = read_catalogue(&resolve(manifest_path, &run.truth))?;
        let obs = read_observations(&resolve(manifest_path, &run.observations))?;
        obs.check_against(&config)?;
        eprintln!("run {}", run.id);
        let result = infer(&obs, &config, &rc.sampler, rc.chains, derive_seed(run.seed, 2) ^ rc.seed, true)?;
        let rel = format!("runs/{}/results", run.id);
        write_inference(&resolve(manifest_path, &rel), &result, &config, rc.displacement_stride)?;
        run.results = Some(rel);
    }
    write_manifest(manifest_path, &manifest)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let rc = a.common.resolve(None)?;
    if let Some(truth_path) = &a.truth {
        let (truth, truth_cfg) = read_catalogue(truth_path)?;
        let (est, est_cfg) = read_catalogue(a.estimate.as_ref().expect("clap enforces --estimate"))?;
        let obs = read_observations(a.obs.as_ref().expect("clap enforces --obs"))?;
        let intensity = a.intensity.as_deref().map(read_intensity).transpose()?.map(|(f, _)| f);
        let metrics = evaluate(&truth, &truth_cfg, &est, &est_cfg, intensity.as_deref(), &obs)?;
        return write_metrics(&rc.out.join("metrics.json"), &metrics);
    }
    let manifest_path = a.manifest.as_ref().expect("clap enforces --truth or --manifest");
    let manifest = read_manifest(manifest_path)?;
    for run in &manifest.runs {
        let Some(results) = &run.results else { continue };
        let dir = resolve(manifest_path, results);
        let (truth, truth_cfg) = read_catalogue(&resolve(manifest_path, &run.truth))?;
        let (est, est_cfg) = read_catalogue(&dir.join("posterior_mean.json"))?;
        let obs = read_observations(&resolve(manifest_path, &run.observations))?;
        let intensity_path = dir.join("intensity.psvt");
        let intensity = if intensity_path.is_file() { Some(read_intensity(&intensity_path)?.0) } else { None };
        let metrics = evaluate(&truth, &truth_cfg, &est, &est_cfg, intensity.as_deref(), &obs)?;
        write_metrics(&dir.join("metrics.json"), &metrics)?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let rc = a.common.resolve(None)?;
    if a.states == 0 {
        return Err(Error::Config("--states must be >= 1".into()));
    }
    let err = max_gradient_error(rc.seed, a.dim, a.states)?;
    println!("max relative error {err:.3e} over {} states (dim {})", a.states, a.dim);
    if err < TOLERANCE {
        Ok(())
    } else {
        Err(Error::GradientCheck(err))
    }
}

fn summarize(a: SummarizeArgs) -> Result<()> {
    let rc = a.common.resolve(None)?;
    if let Some(manifest_path) = &a.manifest {
        let manifest = read_manifest(manifest_path)?;
        let mut rows = Vec::new();
        for run in &manifest.runs {
            let Some(results) = &run.results else { continue };
            let path = resolve(manifest_path, results).join("metrics.json");
            if !path.is_file() {
                eprintln!("skipping {}: no metrics.json", run.id);
                continue;
            }
            rows.push(((run.num_sources, run.num_times), read_json::<MetricsDoc>(&path)?));
        }
        let table = table1(&rows);
        let text = format_table1(&table);
        write_json(&rc.out.join("table1.json"), &table)?;
        write_atomic(&rc.out.join("table1.txt"), text.as_bytes())?;
        print!("{text}");
        return Ok(());
    }
    let chains = a.chain.iter().map(|p| read_chain(p)).collect::<Result<Vec<_>>>()?;
    let summary = SummaryDoc::from(&summarize_chain(&chains)?);
    write_json(&rc.out.join("summary.json"), &summary)?;
    println!(
        "chains {}\tdraws {}\tmean accept {:.3}\tdivergences {}\tlabel switches {}",
        summary.num_chains, summary.draws_per_chain, summary.mean_accept, summary.divergences, summary.label_switch_draws
    );
    println!("parameter\tmean\tsd\t2.5%\t50%\t97.5%\tess\trhat");
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    for p in &summary.parameters {
        println!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
            p.name, p.mean, p.sd, p.quantiles[0], p.quantiles[2], p.quantiles[4], opt(p.ess), opt(p.rhat)
        );
    }
    Ok(())
}
