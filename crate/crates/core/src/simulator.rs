//! Ground-truth catalogues drawn from the priors and Poisson observations
//! synthesized through the forward model.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::math::MAX_DIM;
use crate::model::{render_all, Catalogue, ModelConfig, ObservationStack};

/// Distance kept between truth sources and the grid edges: six PSF
/// standard deviations along the widest principal axis.
pub fn interior_margin(config: &ModelConfig) -> f64 {
    6.0 * config.psf_sigma_max()
}

/// Draws a catalogue from the priors. Positions are uniform on the interior
/// box `[m, L − m]` with `m` from [`interior_margin`]; fluorescence is
/// exponential with mean κ, momenta are i.i.d. `N(0, Σ_motion)` and the
/// background is half-normal with scale ν.
pub fn sample_catalogue(config: &ModelConfig, seed: u64) -> Result<Catalogue> {
    config.validate()?;
    let margin = interior_margin(config);
    for &n in &config.grid_shape {
        if 2.0 * margin >= n as f64 {
            return Err(Error::MarginTooLarge { margin, extent: n });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dim, n_src, n_t) = (config.dim, config.num_sources, config.num_times);
    let mut c = Catalogue::zeros(dim, n_src, n_t);
    let ext = config.extents();
    for i in 0..n_src {
        let mut x = [0.0; MAX_DIM];
        for a in 0..dim {
            x[a] = rng.random_range(margin..ext[a] - margin);
        }
        c.set_position(i, &x);
    }
    let fluor = Exp::new(1.0 / config.fluor_scale).map_err(|_| Error::InvalidConfig("fluor_scale"))?;
    for f in c.fluorescence.iter_mut() {
        *f = fluor.sample(&mut rng);
    }
    for k in 0..n_src * n_t {
        let mut z = [0.0; MAX_DIM];
        for zk in z.iter_mut().take(dim) {
            *zk = rng.sample(StandardNormal);
        }
        let p = config.motion_cov.correlate(&z);
        c.momenta[k * dim..(k + 1) * dim].copy_from_slice(&p[..dim]);
    }
    let z: f64 = rng.sample(StandardNormal);
    c.background = (z * config.background_scale).abs();
    Ok(c)
}

/// Independent Poisson counts with mean `λ_t(x) + λ0` at every voxel.
pub fn simulate_observations(catalogue: &Catalogue, config: &ModelConfig, seed: u64) -> Result<ObservationStack> {
    config.validate()?;
    catalogue.validate(config)?;
    let fields = render_all(catalogue, config)?;
    let means: Vec<f64> =
        fields.iter().flat_map(|f| f.values.iter().map(|v| v + catalogue.background)).collect();
    ObservationStack::new(config.grid_shape.clone(), config.num_times, sample_poisson(&means, seed))
}

/// One Poisson draw per entry of `means`, deterministic in `seed`.
pub fn sample_poisson(means: &[f64], seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    means
        .iter()
        .map(|&m| {
            if m > 0.0 {
                // inversion below 12, transformed rejection above
                let d = Poisson::new(m).expect("finite positive Poisson mean");
                let v: f64 = d.sample(&mut rng);
                v as u32
            } else {
                0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_moments() {
        let mut cfg = ModelConfig::benchmark_2d(64, 100, 100);
        cfg.psf_cov = crate::math::SpdMatrix::isotropic(2, 1.0).unwrap();
        let c = sample_catalogue(&cfg, 42).unwrap();
        let n = c.fluorescence.len() as f64;
        let mean = c.fluorescence.iter().sum::<f64>() / n;
        assert!((mean - 200.0).abs() < 3.0 * 200.0 / n.sqrt(), "mean {mean}");
        for axis in 0..2 {
            let xs: Vec<f64> = c.momenta.iter().skip(axis).step_by(2).copied().collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt();
            assert!((sd - 3.0).abs() < 0.1, "sd {sd}");
        }
        let lo = 6.0;
        assert!(c.positions.iter().all(|&x| x >= lo && x <= 64.0 - lo));
        assert_eq!(c, sample_catalogue(&cfg, 42).unwrap());
        assert_ne!(c, sample_catalogue(&cfg, 43).unwrap());
    }

    #[test]
    fn margin_must_fit() {
        let cfg = ModelConfig::benchmark_2d(40, 1, 1);
        assert!(matches!(sample_catalogue(&cfg, 0), Err(Error::MarginTooLarge { .. })));
    }

    #[test]
    fn dark_scene_has_no_counts() {
        let cfg = ModelConfig::benchmark_2d(64, 2, 2);
        let mut c = sample_catalogue(&cfg, 1).unwrap();
        c.fluorescence.iter_mut().for_each(|f| *f = 0.0);
        c.background = 0.0;
        let obs = simulate_observations(&c, &cfg, 5).unwrap();
        assert!(obs.counts.iter().all(|&n| n == 0));
    }

    #[test]
    fn constant_mean_moments() {
        let counts = sample_poisson(&alloc::vec![4.0; 4096], 9);
        let n = counts.len() as f64;
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
        let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 4.0).abs() < 3.0 * (4.0f64 / n).sqrt(), "mean {mean}");
        let ratio = var / mean;
        assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn seeds_change_counts_not_expectation() {
        let cfg = ModelConfig::benchmark_2d(64, 2, 1);
        let c = sample_catalogue(&cfg, 3).unwrap();
        let a = simulate_observations(&c, &cfg, 1).unwrap();
        let b = simulate_observations(&c, &cfg, 2).unwrap();
        assert_ne!(a.counts, b.counts);
        assert_eq!(a, simulate_observations(&c, &cfg, 1).unwrap());
    }
}
