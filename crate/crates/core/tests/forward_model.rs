use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synaptrace_core::model::{
    displacement_at, kernel_eval, psf_eval, rasterize_displacement, render_intensity, voxel_coords, warp_template, Psf,
};
use synaptrace_core::{Catalogue, ModelConfig, SpdMatrix};

fn random_spd(rng: &mut impl Rng, dim: usize) -> SpdMatrix {
    // A Aᵀ + dim·I keeps eigenvalues away from zero
    let a: Vec<f64> = (0..dim * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut m = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            m[r * dim + c] = (0..dim).map(|k| a[r * dim + k] * a[c * dim + k]).sum::<f64>();
        }
        m[r * dim + r] += dim as f64;
    }
    SpdMatrix::new(dim, &m).unwrap()
}

fn to3(v: &[f64]) -> [f64; 3] {
    let mut o = [0.0; 3];
    o[..v.len()].copy_from_slice(v);
    o
}

#[test]
fn psf_sums_to_one_on_wide_grid() {
    for (dim, cov) in [
        (2, vec![10.0, -2.0, -2.0, 15.0]),
        (2, vec![1.0, 0.0, 0.0, 1.0]),
        (3, vec![4.0, 0.5, 0.0, 0.5, 3.0, -0.4, 0.0, -0.4, 2.0]),
    ] {
        let psf = Psf::from_row_major(dim, &cov).unwrap();
        let sigma = psf.cov().max_eigenvalue().sqrt();
        let half = (6.0 * sigma).ceil() as i64;
        let side = (2 * half + 1) as usize;
        let shape = vec![side; dim];
        let center = [half as f64 + 0.3, half as f64 - 0.2, half as f64 + 0.1];
        let mut out = vec![0.0; side.pow(dim as u32)];
        psf.density_on_grid(&center, &shape, &mut out);
        let total: f64 = out.iter().sum();
        assert!((0.99..=1.01).contains(&total), "dim {dim}: {total}");
    }
}

#[test]
fn psf_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let dim = 2 + trial % 2;
        let cov = random_spd(&mut rng, dim);
        let psf = Psf::new(cov);
        let r: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, g) = psf_eval(&r, &psf).unwrap();
        let h = 1e-6;
        let mut err: f64 = 0.0;
        let mut norm: f64 = 0.0;
        for a in 0..dim {
            let mut up = r.clone();
            let mut dn = r.clone();
            up[a] += h;
            dn[a] -= h;
            let fd = (psf_eval(&up, &psf).unwrap().0 - psf_eval(&dn, &psf).unwrap().0) / (2.0 * h);
            err += (g[a] - fd).powi(2);
            norm += g[a] * g[a];
        }
        assert!(err.sqrt() / (norm.sqrt() + 1e-12) < 1e-6, "trial {trial}");
    }
}

#[test]
fn grid_recurrence_matches_direct_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (dim, shape) in [(2, vec![37, 41]), (3, vec![9, 11, 13])] {
        for _ in 0..20 {
            let psf = Psf::new(random_spd(&mut rng, dim));
            let center: Vec<f64> = shape.iter().map(|&n| rng.random_range(-5.0..n as f64 + 5.0)).collect();
            let c = to3(&center);
            let mut out = vec![0.0; shape.iter().product()];
            psf.density_on_grid(&c, &shape, &mut out);
            for (idx, &v) in out.iter().enumerate() {
                let x = voxel_coords(&shape, idx);
                let mut r = [0.0; 3];
                for a in 0..dim {
                    r[a] = x[a] - c[a];
                }
                let direct = psf.density(&r);
                assert!((v - direct).abs() <= 1e-12 * direct + 1e-300, "{v} vs {direct}");
            }
        }
    }
}

#[test]
fn mass_is_conserved_away_from_edges() {
    let mut cfg = ModelConfig::benchmark_2d(64, 3, 2);
    cfg.kernel_bandwidth = 5.0;
    let mut c = Catalogue::zeros(2, 3, 2);
    c.set_position(0, &[28.0, 30.5]);
    c.set_position(1, &[33.2, 35.0]);
    c.set_position(2, &[31.0, 27.7]);
    for i in 0..3 {
        for t in 0..2 {
            c.set_fluor(i, t, 50.0 + 40.0 * (i + t) as f64);
            c.set_momentum(i, t, &[0.3 * i as f64, -0.2 * t as f64]);
        }
    }
    for t in 0..2 {
        let field = render_intensity(&c, t, &cfg).unwrap();
        let expected: f64 = (0..3).map(|i| c.fluor(i, t)).sum();
        let total: f64 = field.values.iter().sum();
        assert!((total - expected).abs() / expected < 1e-3, "{total} vs {expected}");
    }
}

#[test]
fn intensity_scales_exactly_with_fluorescence() {
    let cfg = ModelConfig::benchmark_2d(32, 2, 1);
    let mut c = Catalogue::zeros(2, 2, 1);
    c.set_position(0, &[10.0, 12.0]);
    c.set_position(1, &[20.5, 18.0]);
    c.set_fluor(0, 0, 3.0);
    c.set_fluor(1, 0, 5.0);
    let base = render_intensity(&c, 0, &cfg).unwrap();
    let mut scaled = c.clone();
    scaled.fluorescence.iter_mut().for_each(|f| *f *= 2.0);
    let doubled = render_intensity(&scaled, 0, &cfg).unwrap();
    for (a, b) in base.values.iter().zip(&doubled.values) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn warp_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = ModelConfig::benchmark_2d(40, 3, 2);
    let mut c = Catalogue::zeros(2, 3, 2);
    for i in 0..3 {
        c.set_position(i, &[rng.random_range(0.0..40.0), rng.random_range(0.0..40.0)]);
        for t in 0..2 {
            c.set_momentum(i, t, &[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
        }
    }
    for t in 0..2 {
        let warped = warp_template(&c, t, &cfg).unwrap();
        for i in 0..3 {
            let xi = c.position(i);
            let mut expect = [xi[0], xi[1]];
            for j in 0..3 {
                let xj = c.position(j);
                let d2 = (xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2);
                let k = (-d2 / (2.0 * 100.0)).exp();
                expect[0] += k * c.momentum(j, t)[0];
                expect[1] += k * c.momentum(j, t)[1];
            }
            assert_relative_eq!(warped[i][0], expect[0], max_relative = 1e-13);
            assert_relative_eq!(warped[i][1], expect[1], max_relative = 1e-13);
        }
        let field = rasterize_displacement(&c, t, &cfg, 7).unwrap();
        for (pt, v) in field.sample_points.iter().zip(&field.vectors) {
            let direct = displacement_at(&pt[..2], &c, t, &cfg).unwrap();
            assert_eq!(&direct[..2], &v[..2]);
        }
    }
}

proptest! {
    #[test]
    fn kernel_is_symmetric(
        x in prop::collection::vec(-50.0f64..50.0, 3),
        y in prop::collection::vec(-50.0f64..50.0, 3),
        bw in 0.5f64..20.0,
        dim in 2usize..=3,
    ) {
        let (kxy, gxy) = kernel_eval(&x[..dim], &y[..dim], bw).unwrap();
        let (kyx, gyx) = kernel_eval(&y[..dim], &x[..dim], bw).unwrap();
        prop_assert_eq!(kxy, kyx);
        prop_assert!(kxy > 0.0 || (x[..dim] != y[..dim]) && kxy == 0.0);
        prop_assert!(kxy <= 1.0);
        for a in 0..dim {
            prop_assert_eq!(gxy[a], -gyx[a]);
        }
    }

    #[test]
    fn zero_momenta_warp_is_identity(
        pos in prop::collection::vec(0.0f64..31.0, 6),
    ) {
        let cfg = ModelConfig::benchmark_2d(32, 3, 2);
        let mut c = Catalogue::zeros(2, 3, 2);
        for i in 0..3 {
            c.set_position(i, &pos[2 * i..2 * i + 2]);
        }
        for t in 0..2 {
            let w = warp_template(&c, t, &cfg).unwrap();
            for i in 0..3 {
                prop_assert_eq!(&w[i][..2], c.position(i));
            }
        }
    }
}
