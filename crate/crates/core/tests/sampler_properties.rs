use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use synaptrace_core::diagnostics::effective_sample_size;
use synaptrace_core::sampler::{hmc_step, kinetic_energy, leapfrog, run_chain, run_hmc};
use synaptrace_core::simulator::{sample_catalogue, simulate_observations};
use synaptrace_core::{ChainInit, ModelConfig, ObservationStack, Potential, SamplerConfig};

/// `½ Σ q²/σ²` per coordinate.
struct Gaussian {
    var: Vec<f64>,
}

impl Potential for Gaussian {
    fn dim(&self) -> usize {
        self.var.len()
    }

    fn potential(&self, q: &[f64]) -> f64 {
        q.iter().zip(&self.var).map(|(x, v)| 0.5 * x * x / v).sum()
    }

    fn potential_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        for ((g, x), v) in grad.iter_mut().zip(q).zip(&self.var) {
            *g = x / v;
        }
        self.potential(q)
    }
}

/// Correlated bivariate Gaussian with covariance `[[1, ρ], [ρ, 1]]`.
struct Correlated {
    rho: f64,
}

impl Potential for Correlated {
    fn dim(&self) -> usize {
        2
    }

    fn potential(&self, q: &[f64]) -> f64 {
        let d = 1.0 - self.rho * self.rho;
        0.5 * (q[0] * q[0] - 2.0 * self.rho * q[0] * q[1] + q[1] * q[1]) / d
    }

    fn potential_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let d = 1.0 - self.rho * self.rho;
        grad[0] = (q[0] - self.rho * q[1]) / d;
        grad[1] = (q[1] - self.rho * q[0]) / d;
        self.potential(q)
    }
}

/// Smooth non-quadratic potential `Σ ln cosh q + q⁴/20`.
struct Anharmonic;

impl Potential for Anharmonic {
    fn dim(&self) -> usize {
        3
    }

    fn potential(&self, q: &[f64]) -> f64 {
        q.iter().map(|x| x.cosh().ln() + x.powi(4) / 20.0).sum()
    }

    fn potential_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        for (g, x) in grad.iter_mut().zip(q) {
            *g = x.tanh() + x.powi(3) / 5.0;
        }
        self.potential(q)
    }
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

#[test]
fn leapfrog_is_reversible() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let targets: [(&dyn Potential, usize); 2] = [(&Gaussian { var: vec![1.0, 0.5, 4.0] }, 3), (&Anharmonic, 3)];
    for (target, n) in targets {
        for _ in 0..20 {
            let q = normal_vec(&mut rng, n);
            let v = normal_vec(&mut rng, n);
            let mass = vec![1.0, 2.0, 0.5];
            let fwd = leapfrog(target, &q, &v, 0.07, 25, &mass);
            let back_v: Vec<f64> = fwd.velocity.iter().map(|x| -x).collect();
            let back = leapfrog(target, &fwd.position, &back_v, 0.07, 25, &mass);
            let err = q.iter().zip(&back.position).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let verr = v.iter().zip(&back.velocity).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-8 && verr < 1e-8, "{err} {verr}");
            assert_eq!(fwd.grad_evals, 26);
        }
    }
}

#[test]
fn energy_error_scales_quadratically() {
    let target = Gaussian { var: vec![1.0] };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let starts: Vec<(f64, f64)> =
        (0..2001).map(|_| (rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))).collect();
    let median_dh = |eps: f64, steps: usize| {
        median(
            starts
                .iter()
                .map(|&(q, v)| {
                    let t = leapfrog(&target, &[q], &[v], eps, steps, &[1.0]);
                    let h0 = 0.5 * q * q + 0.5 * v * v;
                    let h1 = t.potential + kinetic_energy(&t.velocity, &[1.0]);
                    (h1 - h0).abs()
                })
                .collect(),
        )
    };
    let coarse = median_dh(0.2, 5);
    let fine = median_dh(0.1, 10);
    let finer = median_dh(0.05, 20);
    for ratio in [coarse / fine, fine / finer] {
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn acceptance_matches_exact_sampler_oracle() {
    // stationary HMC acceptance equals E[min(1, e^{−ΔH})] under exact draws
    let target = Gaussian { var: vec![1.0; 10] };
    let (eps, steps) = (0.6, 4);
    let mass = vec![1.0; 10];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let oracle: f64 = (0..10_000)
        .map(|_| {
            let q = normal_vec(&mut rng, 10);
            let v = normal_vec(&mut rng, 10);
            let t = leapfrog(&target, &q, &v, eps, steps, &mass);
            let dh = t.potential + kinetic_energy(&t.velocity, &mass) - target.potential(&q) - kinetic_energy(&v, &mass);
            (-dh).exp().min(1.0)
        })
        .sum::<f64>()
        / 10_000.0;
    let mut q = normal_vec(&mut rng, 10);
    let mut total = 0.0;
    for _ in 0..10_000 {
        let s = hmc_step(&target, &q, eps, steps, &mass, &mut rng);
        total += s.accept_prob;
        q = s.position;
    }
    let empirical = total / 10_000.0;
    assert!((empirical - oracle).abs() < 0.05, "{empirical} vs {oracle}");
    assert!(oracle > 0.3 && oracle < 0.99);
}

#[test]
fn tiny_steps_are_always_accepted() {
    let target = Anharmonic;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = vec![0.3, -0.2, 1.0];
    for _ in 0..50 {
        let s = hmc_step(&target, &q, 1e-5, 3, &[1.0; 3], &mut rng);
        assert!(s.accept_prob > 0.999_999);
    }
}

#[test]
fn dual_averaging_hits_target_on_normal() {
    let target = Gaussian { var: vec![1.0, 4.0, 0.25, 1.0, 9.0] };
    let cfg = SamplerConfig { warmup_iters: 1000, sample_iters: 2000, seed: 5, ..Default::default() };
    let chain = run_hmc(&target, &[0.5; 5], &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let mean = chain.accept_probs.iter().sum::<f64>() / chain.accept_probs.len() as f64;
    assert!((0.83..=0.95).contains(&mean), "mean acceptance {mean}");
    assert!(chain.step_size_trace.windows(2).all(|w| w[0] == w[1]));
    // mass matrix tracks the inverse variances
    for (m, v) in chain.mass_diag.iter().zip(&target.var) {
        assert!((m * v - 1.0).abs() < 0.5, "mass {m} for variance {v}");
    }
}

#[test]
fn correlated_gaussian_moments() {
    let rho = 0.8;
    let target = Correlated { rho };
    let cfg = SamplerConfig { warmup_iters: 1000, sample_iters: 6000, seed: 6, ..Default::default() };
    let chain = run_hmc(&target, &[1.0, -1.0], &cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let n = chain.draws.len() as f64;
    let col = |k: usize| chain.draws.iter().map(|d| d[k]).collect::<Vec<_>>();
    let (a, b) = (col(0), col(1));
    let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    let sq_a: Vec<f64> = a.iter().map(|x| x * x).collect();
    for (xs, truth, sd) in [
        (&a, 0.0, 1.0),
        (&b, 0.0, 1.0),
        (&sq_a, 1.0, 2f64.sqrt()),
        (&prod, rho, (1.0 + rho * rho).sqrt()),
    ] {
        let mean = xs.iter().sum::<f64>() / n;
        let ess = effective_sample_size(&[xs.as_slice()]).unwrap();
        let se = sd / ess.sqrt();
        assert!((mean - truth).abs() < 3.0 * se, "{mean} vs {truth} (se {se}, ess {ess})");
    }
}

fn posterior_mean_by_quadrature(total: f64, n: f64, nu: f64) -> f64 {
    // density ∝ λ^total e^{−nλ − λ²/(2ν²)}, integrated on a fine grid around the mode
    let mode = total / n;
    let width = 12.0 * mode.sqrt() / n.sqrt() + 1e-3;
    let (lo, hi) = ((mode - width).max(1e-9), mode + width);
    let k = 20_000;
    let h = (hi - lo) / k as f64;
    let log_dens = |l: f64| total * l.ln() - n * l - l * l / (2.0 * nu * nu);
    let peak = log_dens(mode);
    let (mut z, mut m) = (0.0, 0.0);
    for i in 0..=k {
        let l = lo + h * i as f64;
        let w = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let d = (log_dens(l) - peak).exp();
        z += w * d;
        m += w * d * l;
    }
    m / z
}

#[test]
fn background_only_posterior_matches_quadrature() {
    let mut cfg = ModelConfig::benchmark_2d(8, 0, 2);
    cfg.background_scale = 2.0;
    let counts = synaptrace_core::simulator::sample_poisson(&[3.0; 128], 7);
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let obs = ObservationStack::new(vec![8, 8], 2, counts).unwrap();
    let scfg = SamplerConfig { warmup_iters: 500, sample_iters: 4000, seed: 7, ..Default::default() };
    let chain = run_chain(&obs, &cfg, &scfg, &ChainInit::Auto).unwrap();
    let draws: Vec<f64> = chain.draws.iter().map(|c| c.background).collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / effective_sample_size(&[&draws]).unwrap().sqrt();
    let oracle = posterior_mean_by_quadrature(total, 128.0, 2.0);
    assert!((mean - oracle).abs() < 3.0 * se, "{mean} vs {oracle} (se {se})");
}

#[test]
fn chains_are_pure_functions_of_the_seed() {
    let cfg = ModelConfig::benchmark_2d(64, 1, 2);
    let truth = sample_catalogue(&cfg, 9).unwrap();
    let obs = simulate_observations(&truth, &cfg, 10).unwrap();
    let scfg = SamplerConfig { warmup_iters: 40, sample_iters: 20, seed: 3, ..Default::default() };
    let a = run_chain(&obs, &cfg, &scfg, &ChainInit::Auto).unwrap();
    let b = run_chain(&obs, &cfg, &scfg, &ChainInit::Auto).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 20);
    assert_eq!(a.energies.len(), 20);
    assert!(a.accept_probs.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(a.step_size_trace.windows(2).all(|w| w[0] == w[1]));
    let other = run_chain(&obs, &cfg, &SamplerConfig { seed: 4, ..scfg }, &ChainInit::Auto).unwrap();
    assert_ne!(a.draws, other.draws);
}
