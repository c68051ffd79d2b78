use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synaptrace_core::model::render_all;
use synaptrace_core::posterior::{finite_diff_gradient, relative_linf_error, to_unconstrained};
use synaptrace_core::simulator::sample_poisson;
use synaptrace_core::{Catalogue, ModelConfig, ObservationStack, PosteriorContext, Potential, SpdMatrix};

fn random_config(rng: &mut impl Rng, dim: usize, grid: usize) -> ModelConfig {
    let diag: Vec<f64> = (0..dim).map(|_| rng.random_range(1.0..4.0)).collect();
    let mut cov = vec![0.0; dim * dim];
    for a in 0..dim {
        cov[a * dim + a] = diag[a];
    }
    let off = rng.random_range(-0.4..0.4) * (diag[0] * diag[1]).sqrt();
    cov[1] = off;
    cov[dim] = off;
    ModelConfig {
        dim,
        grid_shape: vec![grid; dim],
        num_sources: rng.random_range(1..=3),
        num_times: rng.random_range(1..=3),
        psf_cov: SpdMatrix::new(dim, &cov).unwrap(),
        motion_cov: SpdMatrix::isotropic(dim, rng.random_range(0.5..4.0)).unwrap(),
        fluor_scale: rng.random_range(50.0..300.0),
        background_scale: rng.random_range(1.0..6.0),
        kernel_bandwidth: rng.random_range(2.0..8.0),
    }
}

fn random_catalogue(rng: &mut impl Rng, cfg: &ModelConfig) -> Catalogue {
    let mut c = Catalogue::zeros(cfg.dim, cfg.num_sources, cfg.num_times);
    let hi = cfg.grid_shape[0] as f64 - 2.0;
    c.positions.iter_mut().for_each(|x| *x = rng.random_range(2.0..hi));
    c.fluorescence.iter_mut().for_each(|f| *f = rng.random_range(2.3f64..5.7).exp());
    c.momenta.iter_mut().for_each(|p| *p = rng.random_range(-1.5..1.5));
    c.background = rng.random_range(0.5..5.0);
    c
}

fn observe(rng: &mut impl Rng, truth: &Catalogue, cfg: &ModelConfig) -> ObservationStack {
    let means: Vec<f64> =
        render_all(truth, cfg).unwrap().iter().flat_map(|f| f.values.iter().map(|v| v + truth.background)).collect();
    ObservationStack::new(cfg.grid_shape.clone(), cfg.num_times, sample_poisson(&means, rng.random())).unwrap()
}

/// Context with data from one random catalogue, evaluated at another.
fn random_problem(seed: u64, dim: usize, grid: usize) -> (PosteriorContext, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = random_config(&mut rng, dim, grid);
    let truth = random_catalogue(&mut rng, &cfg);
    let obs = observe(&mut rng, &truth, &cfg);
    let state = random_catalogue(&mut rng, &cfg);
    let q = to_unconstrained(&state, &cfg).unwrap().values;
    (PosteriorContext::new(obs, cfg).unwrap(), q)
}

fn gradient_error(ctx: &PosteriorContext, q: &[f64]) -> f64 {
    let mut g = vec![0.0; q.len()];
    let u = ctx.potential_and_gradient(q, &mut g);
    assert!(u.is_finite());
    relative_linf_error(&g, &finite_diff_gradient(ctx, q, 1e-5))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_matches_differences_2d(seed in any::<u64>()) {
        let (ctx, q) = random_problem(seed, 2, 16);
        let err = gradient_error(&ctx, &q);
        prop_assert!(err < 1e-6, "relative error {err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_matches_differences_3d(seed in any::<u64>()) {
        let (ctx, q) = random_problem(seed, 3, 12);
        let err = gradient_error(&ctx, &q);
        prop_assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn momenta_prior_grows_with_magnitude(
        k in 0usize..8, base in -3.0f64..3.0, step in 0.01f64..2.0,
    ) {
        // negligible fluorescence on dark data leaves U = prior + constant in p
        let mut cfg = ModelConfig::benchmark_2d(16, 2, 2);
        cfg.psf_cov = SpdMatrix::isotropic(2, 2.0).unwrap();
        let obs = ObservationStack::new(vec![16, 16], 2, vec![0; 512]).unwrap();
        let ctx = PosteriorContext::new(obs, cfg).unwrap();
        let layout = *ctx.layout();
        let mut q = vec![0.3; layout.len()];
        for v in &mut q[layout.fluorescence_start()..layout.momenta_start()] {
            *v = -300.0;
        }
        let idx = layout.momenta_start() + k;
        q[idx] = base;
        let before = ctx.potential(&q);
        q[idx] = if base >= 0.0 { base + step } else { base - step };
        prop_assert!(ctx.potential(&q) > before);
    }
}

#[test]
fn gradient_is_consistent_across_fd_step_sizes() {
    let (ctx, q) = random_problem(3, 2, 16);
    let a = finite_diff_gradient(&ctx, &q, 1e-5);
    let b = finite_diff_gradient(&ctx, &q, 1e-6);
    assert!(relative_linf_error(&a, &b) < 1e-4);
}

#[test]
fn potential_is_deterministic() {
    let (ctx, q) = random_problem(4, 2, 16);
    let mut g1 = vec![0.0; q.len()];
    let mut g2 = vec![0.0; q.len()];
    let u1 = ctx.potential_and_gradient(&q, &mut g1);
    let u2 = ctx.clone().potential_and_gradient(&q, &mut g2);
    assert_eq!(u1.to_bits(), u2.to_bits());
    assert_eq!(g1, g2);
    assert_eq!(ctx.potential(&q).to_bits(), u1.to_bits());
    let mut g3 = vec![0.0; q.len()];
    assert!(ctx.gradient(&q, &mut g3));
    assert_eq!(g1, g3);
}

#[test]
fn shifting_scene_by_a_voxel_changes_only_the_jacobian() {
    let grid = 40usize;
    let mut cfg = ModelConfig::benchmark_2d(grid, 2, 2);
    cfg.psf_cov = SpdMatrix::new(2, &[2.0, 0.3, 0.3, 1.5]).unwrap();
    let mut c = Catalogue::zeros(2, 2, 2);
    c.set_position(0, &[18.3, 19.1]);
    c.set_position(1, &[21.6, 22.4]);
    c.fluorescence = vec![200.0, 150.0, 180.0, 220.0];
    c.momenta = vec![0.4, -0.2, 0.1, 0.3, -0.5, 0.2, 0.0, 0.1];
    c.background = 2.0;
    // deterministic counts; rows near the edges are pure background
    let fields = render_all(&c, &cfg).unwrap();
    let counts: Vec<u32> =
        fields.iter().flat_map(|f| f.values.iter().map(|v| (v + c.background).floor() as u32)).collect();
    let obs = ObservationStack::new(vec![grid, grid], 2, counts.clone()).unwrap();
    let mut shifted_counts = counts.clone();
    for t in 0..2 {
        let frame = &counts[t * grid * grid..(t + 1) * grid * grid];
        let out = &mut shifted_counts[t * grid * grid..(t + 1) * grid * grid];
        for row in 0..grid {
            let src = if row == 0 { 0 } else { row - 1 };
            out[row * grid..(row + 1) * grid].copy_from_slice(&frame[src * grid..(src + 1) * grid]);
        }
    }
    let shifted_obs = ObservationStack::new(vec![grid, grid], 2, shifted_counts).unwrap();
    let mut moved = c.clone();
    for i in 0..2 {
        let x = c.position(i);
        moved.set_position(i, &[x[0] + 1.0, x[1]]);
    }

    let u0 = PosteriorContext::new(obs, cfg.clone()).unwrap().potential(&to_unconstrained(&c, &cfg).unwrap().values);
    let u1 = PosteriorContext::new(shifted_obs, cfg.clone())
        .unwrap()
        .potential(&to_unconstrained(&moved, &cfg).unwrap().values);
    let l = grid as f64;
    let log_jac = |cat: &Catalogue| -> f64 { cat.positions.iter().map(|&x| (x * (l - x) / l).ln()).sum() };
    let expected = -(log_jac(&moved) - log_jac(&c));
    assert!(((u1 - u0) - expected).abs() < 1e-6 * u0.abs(), "{} vs {}", u1 - u0, expected);
}

#[test]
fn fluorescence_residual_is_centred_at_the_truth() {
    for alpha in [1.0, 4.0] {
        let mut cfg = ModelConfig::benchmark_2d(48, 1, 1);
        cfg.psf_cov = SpdMatrix::isotropic(2, 4.0).unwrap();
        let mut c = Catalogue::zeros(2, 1, 1);
        c.set_position(0, &[24.2, 23.7]);
        c.set_fluor(0, 0, 500.0 * alpha);
        c.background = 1.0;
        let lambda: Vec<f64> = render_all(&c, &cfg).unwrap()[0].values.iter().map(|v| v + 1.0).collect();
        let psi: Vec<f64> = lambda.iter().map(|l| (l - 1.0) / c.fluor(0, 0)).collect();
        let ctx = PosteriorContext::new(
            ObservationStack::new(vec![48, 48], 1, sample_poisson(&lambda, 21)).unwrap(),
            cfg.clone(),
        )
        .unwrap();
        let q = to_unconstrained(&c, &cfg).unwrap().values;
        let mut g = vec![0.0; q.len()];
        ctx.potential_and_gradient(&q, &mut g);
        // out = (−Σ r ψ + 1/κ) f − 1
        let f = c.fluor(0, 0);
        let weighted = 1.0 / cfg.fluor_scale - (g[ctx.layout().fluor(0, 0)] + 1.0) / f;
        let se = psi.iter().zip(&lambda).map(|(p, l)| p * p / l).sum::<f64>().sqrt();
        assert!(weighted.abs() < 3.0 * se, "alpha {alpha}: {weighted} vs {se}");
    }
}
