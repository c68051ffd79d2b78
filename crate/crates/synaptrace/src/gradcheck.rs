//! Analytic gradient against central differences on random problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synaptrace_core::model::render_all;
use synaptrace_core::posterior::{finite_diff_gradient, relative_linf_error, to_unconstrained};
use synaptrace_core::simulator::sample_poisson;
use synaptrace_core::{Catalogue, ModelConfig, ObservationStack, PosteriorContext, Potential, SpdMatrix};

use crate::error::{Error, Result};

/// Central-difference step in unconstrained space.
pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;

/// Grid edge used for each dimension: 16² or 12³.
pub fn default_grid(dim: usize) -> usize {
    if dim == 3 {
        12
    } else {
        16
    }
}

/// A small random model (`I, T ≤ 3`), Poisson data from one random
/// catalogue, and an unconstrained state taken from another.
pub fn random_problem(seed: u64, dim: usize, grid: usize) -> Result<(PosteriorContext, Vec<f64>)> {
    if !(2..=3).contains(&dim) {
        return Err(Error::Config(format!("dim must be 2 or 3, got {dim}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag: Vec<f64> = (0..dim).map(|_| rng.random_range(1.0..4.0)).collect();
    let mut cov = vec![0.0; dim * dim];
    for a in 0..dim {
        cov[a * dim + a] = diag[a];
    }
    let off = rng.random_range(-0.4..0.4) * (diag[0] * diag[1]).sqrt();
    cov[1] = off;
    cov[dim] = off;
    let config = ModelConfig {
        dim,
        grid_shape: vec![grid; dim],
        num_sources: rng.random_range(1..=3),
        num_times: rng.random_range(1..=3),
        psf_cov: SpdMatrix::new(dim, &cov)?,
        motion_cov: SpdMatrix::isotropic(dim, rng.random_range(0.5..4.0))?,
        fluor_scale: rng.random_range(50.0..300.0),
        background_scale: rng.random_range(1.0..6.0),
        kernel_bandwidth: rng.random_range(2.0..8.0),
    };
    let truth = random_state(&mut rng, &config);
    let means: Vec<f64> = render_all(&truth, &config)?
        .iter()
        .flat_map(|f| f.values.iter().map(|v| v + truth.background))
        .collect();
    let obs = ObservationStack::new(config.grid_shape.clone(), config.num_times, sample_poisson(&means, rng.random()))?;
    let state = random_state(&mut rng, &config);
    let q = to_unconstrained(&state, &config)?.values;
    Ok((PosteriorContext::new(obs, config)?, q))
}

fn random_state(rng: &mut impl Rng, config: &ModelConfig) -> Catalogue {
    let mut c = Catalogue::zeros(config.dim, config.num_sources, config.num_times);
    let hi = config.grid_shape[0] as f64 - 2.0;
    c.positions.iter_mut().for_each(|x| *x = rng.random_range(2.0..hi));
    c.fluorescence.iter_mut().for_each(|f| *f = rng.random_range(2.3f64..5.7).exp());
    c.momenta.iter_mut().for_each(|p| *p = rng.random_range(-1.5..1.5));
    c.background = rng.random_range(0.5..5.0);
    c
}

/// Relative ℓ∞ error of the analytic gradient at one state.
pub fn gradient_error(ctx: &PosteriorContext, q: &[f64]) -> f64 {
    let mut g = vec![0.0; q.len()];
    let u = ctx.potential_and_gradient(q, &mut g);
    if !u.is_finite() {
        return f64::INFINITY;
    }
    relative_linf_error(&g, &finite_diff_gradient(ctx, q, FD_STEP))
}

/// Largest error over `states` random problems whose seeds derive from `seed`.
pub fn max_gradient_error(seed: u64, dim: usize, states: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..states {
        let (ctx, q) = random_problem(crate::benchmark::derive_seed(seed, k as u64), dim, default_grid(dim))?;
        let e = gradient_error(&ctx, &q);
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    }
    Ok(worst)
}
