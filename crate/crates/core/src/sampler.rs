//! Fixed-trajectory Hamiltonian Monte Carlo with leapfrog integration,
//! Metropolis correction, dual-averaging step-size adaptation and windowed
//! diagonal mass-matrix adaptation during warm-up.
//!
//! The mass matrix `M` is diagonal; `mass_diag` holds its diagonal, so the
//! kinetic energy is `½ Σ v_j² / M_j` and velocities are drawn from
//! `N(0, M)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::init::auto_initialize;
use crate::math;
use crate::model::{render_on_grid, Catalogue, IntensityField, ModelConfig, ObservationStack, Psf, VoxelGrid};
use crate::posterior::{constrain_slice, to_unconstrained, ParameterLayout, PosteriorContext, Potential};

/// Energy error beyond which a trajectory is treated as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub warmup_iters: usize,
    pub sample_iters: usize,
    pub target_accept: f64,
    /// Fixed trajectory length. `None` picks `L = ⌈1/ε⌉` from the current
    /// step size during warm-up and freezes it afterwards.
    pub leapfrog_steps: Option<usize>,
    /// Upper bound on the automatic trajectory length.
    pub max_leapfrog_steps: usize,
    pub init_step_size: f64,
    /// Length of the first variance-estimation window; later windows double.
    pub mass_adapt_window: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            warmup_iters: 1000,
            sample_iters: 1000,
            target_accept: 0.9,
            leapfrog_steps: None,
            max_leapfrog_steps: 64,
            init_step_size: 0.1,
            mass_adapt_window: 25,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_iters == 0 {
            return Err(Error::InvalidSampler("sample_iters must be >= 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidSampler("target_accept must lie in (0, 1)"));
        }
        if self.leapfrog_steps == Some(0) || self.max_leapfrog_steps == 0 {
            return Err(Error::InvalidSampler("leapfrog steps must be >= 1"));
        }
        if !(self.init_step_size > 0.0 && self.init_step_size.is_finite()) {
            return Err(Error::InvalidSampler("init_step_size must be positive"));
        }
        if self.mass_adapt_window == 0 {
            return Err(Error::InvalidSampler("mass_adapt_window must be >= 1"));
        }
        Ok(())
    }
}

/// End state of one leapfrog trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub potential: f64,
    pub gradient: Vec<f64>,
    /// Potential at the starting point.
    pub initial_potential: f64,
    pub grad_evals: usize,
    pub divergent: bool,
}

/// `L` leapfrog steps from `(q, v)`. Adjacent half-steps are fused, so this
/// costs `L + 1` gradient evaluations including the one at the start.
pub fn leapfrog<P: Potential + ?Sized>(
    target: &P,
    q: &[f64],
    v: &[f64],
    step_size: f64,
    steps: usize,
    mass_diag: &[f64],
) -> Trajectory {
    let n = q.len();
    let mut grad = vec![0.0; n];
    let u0 = target.potential_and_gradient(q, &mut grad);
    let mut t = Trajectory {
        position: q.to_vec(),
        velocity: v.to_vec(),
        potential: u0,
        gradient: grad,
        initial_potential: u0,
        grad_evals: 1,
        divergent: !u0.is_finite(),
    };
    if t.divergent {
        return t;
    }
    leapfrog_from(target, &mut t, step_size, steps, mass_diag);
    t
}

fn leapfrog_from<P: Potential + ?Sized>(
    target: &P,
    t: &mut Trajectory,
    step_size: f64,
    steps: usize,
    mass_diag: &[f64],
) {
    let half = 0.5 * step_size;
    for step in 0..steps {
        for ((v, g), _) in t.velocity.iter_mut().zip(&t.gradient).zip(mass_diag) {
            *v -= half * g;
        }
        for ((q, v), m) in t.position.iter_mut().zip(&t.velocity).zip(mass_diag) {
            *q += step_size * v / m;
        }
        // only the end point needs U
        let finite = if step + 1 == steps {
            t.potential = target.potential_and_gradient(&t.position, &mut t.gradient);
            t.potential.is_finite()
        } else {
            target.gradient(&t.position, &mut t.gradient)
        };
        t.grad_evals += 1;
        if !finite || t.gradient.iter().any(|g| !g.is_finite()) {
            t.potential = f64::INFINITY;
            t.divergent = true;
            return;
        }
        for (v, g) in t.velocity.iter_mut().zip(&t.gradient) {
            *v -= half * g;
        }
    }
}

pub fn kinetic_energy(v: &[f64], mass_diag: &[f64]) -> f64 {
    0.5 * v.iter().zip(mass_diag).map(|(v, m)| v * v / m).sum::<f64>()
}

/// Outcome of one HMC transition.
#[derive(Debug, Clone)]
pub struct HmcStep {
    pub position: Vec<f64>,
    pub potential: f64,
    pub accepted: bool,
    pub accept_prob: f64,
    /// Hamiltonian at the accepted state (with its sampled/propagated velocity).
    pub energy: f64,
    pub divergent: bool,
    pub grad_evals: usize,
}

/// Draws `v ~ N(0, M)`, integrates, and applies the Metropolis correction.
pub fn hmc_step<P: Potential + ?Sized, R: Rng + ?Sized>(
    target: &P,
    q: &[f64],
    step_size: f64,
    steps: usize,
    mass_diag: &[f64],
    rng: &mut R,
) -> HmcStep {
    let v: Vec<f64> = mass_diag
        .iter()
        .map(|m| {
            let z: f64 = rng.sample(StandardNormal);
            z * math::sqrt(*m)
        })
        .collect();
    let traj = leapfrog(target, q, &v, step_size, steps, mass_diag);
    let h0 = traj.initial_potential + kinetic_energy(&v, mass_diag);
    let h1 = traj.potential + kinetic_energy(&traj.velocity, mass_diag);
    let delta = h1 - h0;
    let divergent = traj.divergent || !delta.is_finite() || math::abs(delta) > DIVERGENCE_THRESHOLD;
    let accept_prob = if divergent { 0.0 } else { math::exp(-delta).min(1.0) };
    let u: f64 = rng.random();
    let accepted = !divergent && u < accept_prob;
    if accepted {
        HmcStep {
            position: traj.position,
            potential: traj.potential,
            accepted,
            accept_prob,
            energy: h1,
            divergent,
            grad_evals: traj.grad_evals,
        }
    } else {
        HmcStep {
            position: q.to_vec(),
            potential: traj.initial_potential,
            accepted,
            accept_prob,
            energy: h0,
            divergent,
            grad_evals: traj.grad_evals,
        }
    }
}

/// Dual-averaging step-size schedule (γ = 0.05, t₀ = 10, κ = 0.75,
/// μ = log(10·ε₀)).
#[derive(Debug, Clone, PartialEq)]
pub struct DualAveraging {
    pub target: f64,
    pub mu: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    count: u64,
    error_bar: f64,
    log_step: f64,
    log_step_bar: f64,
}

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64) -> Self {
        Self {
            target,
            mu: math::ln(10.0 * initial_step),
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            count: 0,
            error_bar: 0.0,
            log_step: math::ln(initial_step),
            log_step_bar: 0.0,
        }
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.count += 1;
        let t = self.count as f64;
        let eta = 1.0 / (t + self.t0);
        self.error_bar = (1.0 - eta) * self.error_bar + eta * (self.target - accept_prob);
        self.log_step = self.mu - math::sqrt(t) / self.gamma * self.error_bar;
        let w = math::powf(t, -self.kappa);
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar;
        math::exp(self.log_step)
    }

    pub fn step_size(&self) -> f64 {
        math::exp(self.log_step)
    }

    /// The averaged iterate, used once adaptation stops.
    pub fn final_step_size(&self) -> f64 {
        if self.count == 0 {
            self.step_size()
        } else {
            math::exp(self.log_step_bar)
        }
    }
}

/// Step-size heuristic: double or halve until the one-step acceptance
/// crosses ½.
pub fn find_reasonable_step_size<P: Potential + ?Sized, R: Rng + ?Sized>(
    target: &P,
    q: &[f64],
    start: f64,
    mass_diag: &[f64],
    rng: &mut R,
) -> f64 {
    let mut eps = start;
    let v: Vec<f64> = mass_diag
        .iter()
        .map(|m| {
            let z: f64 = rng.sample(StandardNormal);
            z * math::sqrt(*m)
        })
        .collect();
    let k0 = kinetic_energy(&v, mass_diag);
    let log_accept = |eps: f64| {
        let t = leapfrog(target, q, &v, eps, 1, mass_diag);
        if t.divergent {
            return f64::NEG_INFINITY;
        }
        let d = t.initial_potential + k0 - t.potential - kinetic_energy(&t.velocity, mass_diag);
        if d.is_finite() {
            d
        } else {
            f64::NEG_INFINITY
        }
    };
    let half = math::ln(0.5);
    let direction = if log_accept(eps) > half { 1 } else { -1 };
    for _ in 0..60 {
        let la = log_accept(eps);
        if direction == 1 && !(la > half) {
            break;
        }
        if direction == -1 && la > half {
            break;
        }
        eps = if direction == 1 { eps * 2.0 } else { eps * 0.5 };
    }
    eps
}

/// Running per-coordinate variance (Welford).
#[derive(Debug, Clone)]
struct RunningVariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Shrunk variance `n/(n+5)·var + 1e−3·5/(n+5)` per coordinate.
    fn regularized(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Boundaries of the warm-up phases: a fast initial buffer, doubling slow
/// windows that estimate the mass matrix, and a fast terminal buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarmupSchedule {
    pub init_buffer: usize,
    pub term_buffer: usize,
    /// Iteration indices (exclusive ends) at which a window closes.
    pub window_ends: Vec<usize>,
}

impl WarmupSchedule {
    pub fn new(warmup: usize, base_window: usize) -> Self {
        let (init_buffer, term_buffer, base) = if warmup >= 75 + 50 + base_window {
            (75, 50, base_window)
        } else {
            let init = warmup * 15 / 100;
            let term = warmup / 10;
            (init, term, warmup.saturating_sub(init + term))
        };
        let mut window_ends = Vec::new();
        if base > 0 {
            let slow_end = warmup - term_buffer;
            let mut start = init_buffer;
            let mut size = base;
            while start < slow_end {
                let mut end = start + size;
                // the last window absorbs a remainder too short to double into
                if end + 2 * size > slow_end {
                    end = slow_end;
                }
                window_ends.push(end);
                start = end;
                size *= 2;
            }
        }
        Self { init_buffer, term_buffer, window_ends }
    }

    fn in_slow_phase(&self, iter: usize) -> bool {
        match self.window_ends.last() {
            Some(&last) => iter >= self.init_buffer && iter < last,
            None => false,
        }
    }
}

/// Unconstrained draws and sampler statistics from [`run_hmc`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawChain {
    pub draws: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    pub accept_flags: Vec<bool>,
    pub accept_probs: Vec<f64>,
    pub step_size_trace: Vec<f64>,
    pub warmup_step_sizes: Vec<f64>,
    pub warmup_accept_probs: Vec<f64>,
    pub mass_diag: Vec<f64>,
    pub leapfrog_steps: usize,
    pub divergences: usize,
    pub grad_evals: usize,
}

fn auto_steps(step_size: f64, max_steps: usize) -> usize {
    let l = math::ceil(1.0 / step_size);
    if l.is_finite() && l >= 1.0 {
        (l as usize).clamp(1, max_steps)
    } else {
        max_steps
    }
}

/// Sampler state reported after every iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    /// 1-based, counting warm-up and sampling together.
    pub iteration: usize,
    pub total: usize,
    pub warmup: bool,
    pub step_size: f64,
    pub accept_prob: f64,
    pub divergences: usize,
}

/// Adaptive HMC on an arbitrary potential, starting at `init`.
pub fn run_hmc<P: Potential + ?Sized, R: Rng + ?Sized>(
    target: &P,
    init: &[f64],
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<RawChain> {
    run_hmc_observed(target, init, config, rng, &mut |_| {})
}

/// As [`run_hmc`], calling `observer` after every iteration.
pub fn run_hmc_observed<P: Potential + ?Sized, R: Rng + ?Sized>(
    target: &P,
    init: &[f64],
    config: &SamplerConfig,
    rng: &mut R,
    observer: &mut dyn FnMut(&Progress),
) -> Result<RawChain> {
    config.validate()?;
    let total = config.warmup_iters + config.sample_iters;
    let dim = init.len();
    if dim != target.dim() {
        return Err(Error::ShapeMismatch("initial point length"));
    }
    if !target.potential(init).is_finite() {
        return Err(Error::InvalidCatalogue("initial point has infinite potential"));
    }
    let mut q = init.to_vec();
    let mut mass_diag = vec![1.0; dim];
    let schedule = WarmupSchedule::new(config.warmup_iters, config.mass_adapt_window);

    let mut step = if config.warmup_iters > 0 {
        find_reasonable_step_size(target, &q, config.init_step_size, &mass_diag, rng)
    } else {
        config.init_step_size
    };
    let mut da = DualAveraging::new(step, config.target_accept);
    let mut variance = RunningVariance::new(dim);
    let mut next_window = 0;

    let mut out = RawChain {
        draws: Vec::with_capacity(config.sample_iters),
        energies: Vec::with_capacity(config.sample_iters),
        accept_flags: Vec::with_capacity(config.sample_iters),
        accept_probs: Vec::with_capacity(config.sample_iters),
        step_size_trace: Vec::with_capacity(config.sample_iters),
        warmup_step_sizes: Vec::with_capacity(config.warmup_iters),
        warmup_accept_probs: Vec::with_capacity(config.warmup_iters),
        mass_diag: Vec::new(),
        leapfrog_steps: 0,
        divergences: 0,
        grad_evals: 0,
    };

    for iter in 0..config.warmup_iters {
        let steps = config.leapfrog_steps.unwrap_or_else(|| auto_steps(step, config.max_leapfrog_steps));
        let s = hmc_step(target, &q, step, steps, &mass_diag, rng);
        out.grad_evals += s.grad_evals;
        out.divergences += s.divergent as usize;
        q = s.position;
        out.warmup_step_sizes.push(step);
        out.warmup_accept_probs.push(s.accept_prob);
        observer(&Progress {
            iteration: iter + 1,
            total,
            warmup: true,
            step_size: step,
            accept_prob: s.accept_prob,
            divergences: out.divergences,
        });
        step = da.update(s.accept_prob);

        if schedule.in_slow_phase(iter) {
            variance.push(&q);
        }
        if schedule.window_ends.get(next_window) == Some(&(iter + 1)) {
            next_window += 1;
            mass_diag = variance.regularized().iter().map(|v| 1.0 / v).collect();
            variance = RunningVariance::new(dim);
            step = find_reasonable_step_size(target, &q, step, &mass_diag, rng);
            da = DualAveraging::new(step, config.target_accept);
            // restarts shrink toward the current scale, not 10x above it
            da.mu = math::ln(step);
        }
    }
    if config.warmup_iters > 0 {
        step = da.final_step_size();
    }
    let steps = config.leapfrog_steps.unwrap_or_else(|| auto_steps(step, config.max_leapfrog_steps));
    out.leapfrog_steps = steps;
    out.mass_diag = mass_diag.clone();

    for iter in 0..config.sample_iters {
        let s = hmc_step(target, &q, step, steps, &mass_diag, rng);
        out.grad_evals += s.grad_evals;
        out.divergences += s.divergent as usize;
        observer(&Progress {
            iteration: config.warmup_iters + iter + 1,
            total,
            warmup: false,
            step_size: step,
            accept_prob: s.accept_prob,
            divergences: out.divergences,
        });
        q = s.position;
        out.draws.push(q.clone());
        out.energies.push(s.energy);
        out.accept_flags.push(s.accepted);
        out.accept_probs.push(s.accept_prob);
        out.step_size_trace.push(step);
    }
    Ok(out)
}

/// Starting point for [`run_chain`].
#[derive(Debug, Clone, PartialEq)]
pub enum ChainInit {
    /// Data-driven start from the observations.
    Auto,
    Catalogue(Catalogue),
}

/// Posterior draws in constrained space with sampler statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub draws: Vec<Catalogue>,
    pub energies: Vec<f64>,
    pub accept_flags: Vec<bool>,
    pub accept_probs: Vec<f64>,
    pub step_size_trace: Vec<f64>,
    pub mass_diag: Vec<f64>,
    pub seed: u64,
    pub initial: Catalogue,
    pub leapfrog_steps: usize,
    pub divergences: usize,
    pub warmup_accept_probs: Vec<f64>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn mean_accept(&self) -> f64 {
        if self.accept_probs.is_empty() {
            return 0.0;
        }
        self.accept_probs.iter().sum::<f64>() / self.accept_probs.len() as f64
    }

    /// Posterior mean of the foreground intensity `λ_t`, averaged over
    /// draws. Unaffected by label switching.
    pub fn mean_intensity(&self, config: &ModelConfig) -> Result<Vec<IntensityField>> {
        if self.draws.is_empty() {
            return Err(Error::EmptyChain);
        }
        let grid = VoxelGrid::new(&config.grid_shape);
        let psf = Psf::new(config.psf_cov);
        let n = self.draws.len() as f64;
        let mut out: Vec<IntensityField> =
            (0..config.num_times).map(|t| IntensityField { time_index: t, values: vec![0.0; grid.len()] }).collect();
        for d in &self.draws {
            for (t, acc) in out.iter_mut().enumerate() {
                let field = render_on_grid(d, t, config, &psf, &grid)?;
                for (a, v) in acc.values.iter_mut().zip(&field.values) {
                    *a += v / n;
                }
            }
        }
        Ok(out)
    }

    /// Componentwise posterior mean of the draws in constrained space.
    pub fn posterior_mean(&self) -> Result<Catalogue> {
        let first = self.draws.first().ok_or(Error::EmptyChain)?;
        let mut mean = Catalogue::zeros(first.dim, first.num_sources, first.num_times);
        let n = self.draws.len() as f64;
        for d in &self.draws {
            for (m, v) in mean.positions.iter_mut().zip(&d.positions) {
                *m += v / n;
            }
            for (m, v) in mean.fluorescence.iter_mut().zip(&d.fluorescence) {
                *m += v / n;
            }
            for (m, v) in mean.momenta.iter_mut().zip(&d.momenta) {
                *m += v / n;
            }
            mean.background += d.background / n;
        }
        Ok(mean)
    }
}

/// Runs one chain on the posterior defined by `obs` and `config`.
pub fn run_chain(
    obs: &ObservationStack,
    config: &ModelConfig,
    sampler: &SamplerConfig,
    init: &ChainInit,
) -> Result<Chain> {
    let ctx = PosteriorContext::new(obs.clone(), config.clone())?;
    run_chain_with_context(&ctx, sampler, init)
}

/// As [`run_chain`], reusing a prepared context.
pub fn run_chain_with_context(ctx: &PosteriorContext, sampler: &SamplerConfig, init: &ChainInit) -> Result<Chain> {
    run_chain_observed(ctx, sampler, init, &mut |_| {})
}

/// As [`run_chain_with_context`], reporting progress after every iteration.
pub fn run_chain_observed(
    ctx: &PosteriorContext,
    sampler: &SamplerConfig,
    init: &ChainInit,
    observer: &mut dyn FnMut(&Progress),
) -> Result<Chain> {
    sampler.validate()?;
    let config = ctx.config();
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let initial = match init {
        ChainInit::Auto => auto_initialize(ctx.observations(), config, &mut rng)?,
        ChainInit::Catalogue(c) => c.clone(),
    };
    let start = to_unconstrained(&initial, config)?;
    let raw = run_hmc_observed(ctx, &start.values, sampler, &mut rng, observer)?;
    let layout = ParameterLayout::new(config);
    Ok(Chain {
        draws: raw.draws.iter().map(|q| constrain_slice(q, &layout, config)).collect(),
        energies: raw.energies,
        accept_flags: raw.accept_flags,
        accept_probs: raw.accept_probs,
        step_size_trace: raw.step_size_trace,
        mass_diag: raw.mass_diag,
        seed: sampler.seed,
        initial,
        leapfrog_steps: raw.leapfrog_steps,
        divergences: raw.divergences,
        warmup_accept_probs: raw.warmup_accept_probs,
    })
}
