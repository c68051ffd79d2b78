//! Data-driven chain initialization.
//!
//! The time-averaged counts are matched-filtered with the PSF. Sources are
//! placed greedily at the maximum of the filtered residual, subtracting each
//! placed source's expected response before the next pick, then jittered by
//! up to half a voxel. Per-time fluorescence solves the small linear system
//! that unmixes overlapping responses. Momenta start at zero and the
//! background at the median count.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::math::{self, SpdMatrix, MAX_DIM};
use crate::model::{voxel_coords, Catalogue, ModelConfig, ObservationStack, Psf};

/// Smallest background accepted as a starting value.
const MIN_BACKGROUND: f64 = 0.1;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Sum of `values` weighted by `weight(offset)` over a cube of half-width
/// `radius` around voxel `center`, clipped to the grid.
fn window_sum(
    shape: &[usize],
    center: &[isize],
    radius: isize,
    mut weight: impl FnMut(&[isize; MAX_DIM], usize) -> f64,
) -> f64 {
    let dim = shape.len();
    let side = (2 * radius + 1) as usize;
    let mut total = 0.0;
    'outer: for w in 0..side.pow(dim as u32) {
        let mut rem = w;
        let mut off = [0isize; MAX_DIM];
        let mut idx = 0usize;
        for k in (0..dim).rev() {
            off[k] = (rem % side) as isize - radius;
            rem /= side;
        }
        for k in 0..dim {
            let p = center[k] + off[k];
            if p < 0 || p >= shape[k] as isize {
                continue 'outer;
            }
            idx = idx * shape[k] + p as usize;
        }
        total += weight(&off, idx);
    }
    total
}

pub fn auto_initialize<R: Rng + ?Sized>(obs: &ObservationStack, config: &ModelConfig, rng: &mut R) -> Result<Catalogue> {
    config.validate()?;
    obs.check_against(config)?;
    let shape = &config.grid_shape;
    let dim = config.dim;
    let v = obs.num_voxels();
    let n_t = config.num_times;

    let mut all: Vec<f64> = obs.counts.iter().map(|&c| c as f64).collect();
    let background = median(&mut all).max(MIN_BACKGROUND);

    let mut cat = Catalogue::zeros(dim, config.num_sources, n_t);
    cat.background = background;
    if config.num_sources == 0 {
        return Ok(cat);
    }

    let mut mean = vec![0.0; v];
    for t in 0..n_t {
        for (m, &c) in mean.iter_mut().zip(obs.frame(t)) {
            *m += c as f64 / n_t as f64;
        }
    }
    let psf = Psf::new(config.psf_cov);
    let sigma = config.psf_sigma_max();
    let radius = math::ceil(3.0 * sigma) as isize;
    let centers: Vec<Vec<isize>> = (0..v)
        .map(|idx| voxel_coords(shape, idx)[..dim].iter().map(|&x| x as isize).collect())
        .collect();
    let offset = |off: &[isize; MAX_DIM]| [off[0] as f64, off[1] as f64, if dim > 2 { off[2] as f64 } else { 0.0 }];
    let filter = |image: &[f64], idx: usize| window_sum(shape, &centers[idx], radius, |off, j| psf.density(&offset(off)) * image[j]);
    // PSF weight inside each clipped window, to remove the background
    let weight: Vec<f64> = (0..v).map(|idx| window_sum(shape, &centers[idx], radius, |off, _| psf.density(&offset(off)))).collect();
    let mut residual: Vec<f64> = (0..v).map(|idx| filter(&mean, idx) - background * weight[idx]).collect();

    // a unit source filtered by the PSF is the PSF convolved with itself
    let mut doubled = config.psf_cov.to_row_major();
    doubled.iter_mut().for_each(|c| *c *= 2.0);
    let response = Psf::new(SpdMatrix::new(dim, &doubled)?);
    let peak_response = response.peak();

    let mut starts: Vec<usize> = Vec::with_capacity(config.num_sources);
    for _ in 0..config.num_sources {
        let idx = (0..v)
            .filter(|j| !starts.contains(j))
            .max_by(|&a, &b| residual[a].partial_cmp(&residual[b]).unwrap_or(core::cmp::Ordering::Equal).then(b.cmp(&a)))
            .expect("more voxels than sources");
        let flux = (residual[idx] / peak_response).max(0.0);
        let c = voxel_coords(shape, idx);
        for (j, r) in residual.iter_mut().enumerate() {
            let y = voxel_coords(shape, j);
            let d = [y[0] - c[0], y[1] - c[1], y[2] - c[2]];
            *r -= flux * response.density(&d);
        }
        starts.push(idx);
    }

    let ext = config.extents();
    let mut positions = Vec::with_capacity(starts.len());
    for (i, &idx) in starts.iter().enumerate() {
        let c = voxel_coords(shape, idx);
        let mut x = [0.0; MAX_DIM];
        for a in 0..dim {
            let jitter: f64 = rng.random_range(-0.5..0.5);
            x[a] = (c[a] + jitter).clamp(0.05, ext[a] - 0.05);
        }
        cat.set_position(i, &x);
        positions.push(c);
    }

    // per-time fluxes from the filtered frames, unmixing overlapping sources
    let n = starts.len();
    let mut gram = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let (p, q) = (positions[a], positions[b]);
            gram[a * n + b] = response.density(&[p[0] - q[0], p[1] - q[1], p[2] - q[2]]);
        }
        gram[a * n + a] *= 1.0 + 1e-3;
    }
    for t in 0..n_t {
        let frame: Vec<f64> = obs.frame(t).iter().map(|&c| c as f64).collect();
        let rhs: Vec<f64> = starts.iter().map(|&idx| filter(&frame, idx) - background * weight[idx]).collect();
        let flux = solve_dense(&gram, &rhs);
        for (i, f) in flux.iter().enumerate() {
            cat.set_fluor(i, t, f.max(1.0));
        }
    }
    Ok(cat)
}

/// Gaussian elimination with partial pivoting on a small dense system.
fn solve_dense(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| math::abs(m[r * n + col]).partial_cmp(&math::abs(m[s * n + col])).unwrap_or(core::cmp::Ordering::Equal))
            .expect("nonempty");
        if m[pivot * n + col] == 0.0 {
            continue;
        }
        if pivot != col {
            for k in 0..n {
                m.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        for r in col + 1..n {
            let f = m[r * n + col] / m[col * n + col];
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let s: f64 = (col + 1..n).map(|k| m[col * n + k] * x[k]).sum();
        let d = m[col * n + col];
        x[col] = if d == 0.0 { 0.0 } else { (x[col] - s) / d };
    }
    x
}
