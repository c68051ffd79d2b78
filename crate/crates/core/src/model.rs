//! Domain types and the deterministic forward model: kernel displacement
//! fields, template warping, the Gaussian PSF and intensity rendering.
//!
//! Coordinates are in voxel units. Axis `k` spans `[0, grid_shape[k])` and
//! the observation grid is the set of integer voxel centers. Voxels are laid
//! out row-major with axis 0 slowest.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, SpdMatrix, Vec3, MAX_DIM};

/// Fixed hyperparameters of the generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub grid_shape: Vec<usize>,
    /// Number of point sources `I`. Zero is allowed and yields a
    /// background-only model.
    pub num_sources: usize,
    pub num_times: usize,
    pub psf_cov: SpdMatrix,
    pub motion_cov: SpdMatrix,
    /// Mean of the exponential fluorescence prior, photons.
    pub fluor_scale: f64,
    /// Scale of the half-normal background prior, photons/voxel.
    pub background_scale: f64,
    pub kernel_bandwidth: f64,
}

impl ModelConfig {
    /// Synthetic-benchmark defaults on a square 2-D grid: κ = 200,
    /// Σ_PSF = [[10, −2], [−2, 15]], Σ_motion = 3²·I, ν = 5, σ_K = 10.
    pub fn benchmark_2d(grid: usize, num_sources: usize, num_times: usize) -> Self {
        Self {
            dim: 2,
            grid_shape: vec![grid, grid],
            num_sources,
            num_times,
            psf_cov: SpdMatrix::new(2, &[10.0, -2.0, -2.0, 15.0]).expect("constant SPD"),
            motion_cov: SpdMatrix::isotropic(2, 9.0).expect("constant SPD"),
            fluor_scale: 200.0,
            background_scale: 5.0,
            kernel_bandwidth: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_DIM).contains(&self.dim) {
            return Err(Error::InvalidConfig("dim must be 2 or 3"));
        }
        if self.grid_shape.len() != self.dim {
            return Err(Error::InvalidConfig("grid_shape length must equal dim"));
        }
        if self.grid_shape.contains(&0) {
            return Err(Error::InvalidConfig("grid_shape entries must be >= 1"));
        }
        if self.num_times == 0 {
            return Err(Error::InvalidConfig("num_times must be >= 1"));
        }
        if self.psf_cov.dim() != self.dim || self.motion_cov.dim() != self.dim {
            return Err(Error::InvalidConfig("covariance dimension must equal dim"));
        }
        for (v, what) in [
            (self.fluor_scale, "fluor_scale must be positive and finite"),
            (self.background_scale, "background_scale must be positive and finite"),
            (self.kernel_bandwidth, "kernel_bandwidth must be positive and finite"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(what));
            }
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.grid_shape.iter().product()
    }

    /// Axis extents as floats (`L_k`).
    pub fn extents(&self) -> Vec3 {
        let mut out = [0.0; MAX_DIM];
        for (o, &n) in out.iter_mut().zip(&self.grid_shape) {
            *o = n as f64;
        }
        out
    }

    pub fn check_time(&self, t: usize) -> Result<()> {
        if t >= self.num_times {
            Err(Error::TimeOutOfRange { index: t, num_times: self.num_times })
        } else {
            Ok(())
        }
    }

    /// Largest PSF standard deviation, `max √eig(Σ_PSF)`.
    pub fn psf_sigma_max(&self) -> f64 {
        math::sqrt(self.psf_cov.max_eigenvalue())
    }
}

/// The latent state θ: template positions, per-time fluorescence, per-time
/// kernel momenta and the background rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalogue {
    pub dim: usize,
    pub num_sources: usize,
    pub num_times: usize,
    /// `I × dim`, row-major.
    pub positions: Vec<f64>,
    /// `I × T`, row-major.
    pub fluorescence: Vec<f64>,
    /// `I × T × dim`, row-major.
    pub momenta: Vec<f64>,
    pub background: f64,
}

impl Catalogue {
    /// All sources at the origin with zero fluorescence and momenta.
    pub fn zeros(dim: usize, num_sources: usize, num_times: usize) -> Self {
        Self {
            dim,
            num_sources,
            num_times,
            positions: vec![0.0; num_sources * dim],
            fluorescence: vec![0.0; num_sources * num_times],
            momenta: vec![0.0; num_sources * num_times * dim],
            background: 0.0,
        }
    }

    #[inline]
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn position_vec(&self, i: usize) -> Vec3 {
        let mut out = [0.0; MAX_DIM];
        out[..self.dim].copy_from_slice(self.position(i));
        out
    }

    pub fn set_position(&mut self, i: usize, x: &[f64]) {
        let d = self.dim;
        self.positions[i * d..(i + 1) * d].copy_from_slice(&x[..d]);
    }

    #[inline]
    pub fn fluor(&self, i: usize, t: usize) -> f64 {
        self.fluorescence[i * self.num_times + t]
    }

    pub fn set_fluor(&mut self, i: usize, t: usize, f: f64) {
        self.fluorescence[i * self.num_times + t] = f;
    }

    #[inline]
    pub fn momentum(&self, i: usize, t: usize) -> &[f64] {
        let start = (i * self.num_times + t) * self.dim;
        &self.momenta[start..start + self.dim]
    }

    pub fn set_momentum(&mut self, i: usize, t: usize, p: &[f64]) {
        let d = self.dim;
        let start = (i * self.num_times + t) * d;
        self.momenta[start..start + d].copy_from_slice(&p[..d]);
    }

    /// Checks array shapes against `config` and the value invariants
    /// (nonnegative fluorescence/background, positions inside the box).
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.dim != config.dim
            || self.num_sources != config.num_sources
            || self.num_times != config.num_times
        {
            return Err(Error::ShapeMismatch("catalogue dimensions disagree with config"));
        }
        let (i, t, d) = (self.num_sources, self.num_times, self.dim);
        if self.positions.len() != i * d
            || self.fluorescence.len() != i * t
            || self.momenta.len() != i * t * d
        {
            return Err(Error::ShapeMismatch("catalogue array lengths"));
        }
        if self
            .positions
            .iter()
            .chain(&self.fluorescence)
            .chain(&self.momenta)
            .chain(core::iter::once(&self.background))
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("catalogue"));
        }
        if self.fluorescence.iter().any(|&f| f < 0.0) {
            return Err(Error::InvalidCatalogue("fluorescence must be nonnegative"));
        }
        if self.background < 0.0 {
            return Err(Error::InvalidCatalogue("background must be nonnegative"));
        }
        let ext = config.extents();
        for src in 0..i {
            for (k, &x) in self.position(src).iter().enumerate() {
                if !(0.0..=ext[k]).contains(&x) {
                    return Err(Error::InvalidCatalogue("position outside the domain box"));
                }
            }
        }
        Ok(())
    }

    /// Relabels sources so that new source `k` is old source `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        for (k, &src) in order.iter().enumerate() {
            out.set_position(k, self.position(src));
            for t in 0..self.num_times {
                out.set_fluor(k, t, self.fluor(src, t));
                out.set_momentum(k, t, self.momentum(src, t));
            }
        }
        out
    }
}

/// Foreground intensity λ_t on the voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityField {
    pub time_index: usize,
    pub values: Vec<f64>,
}

/// Displacement vectors sampled on a regular sub-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub time_index: usize,
    pub sample_points: Vec<Vec3>,
    pub vectors: Vec<Vec3>,
}

/// Observed photon counts, `T × grid`, time slowest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationStack {
    pub grid_shape: Vec<usize>,
    pub num_times: usize,
    pub counts: Vec<u32>,
}

impl ObservationStack {
    pub fn new(grid_shape: Vec<usize>, num_times: usize, counts: Vec<u32>) -> Result<Self> {
        let v: usize = grid_shape.iter().product();
        if grid_shape.is_empty() || v == 0 || num_times == 0 {
            return Err(Error::ShapeMismatch("observation grid must be nonempty"));
        }
        if counts.len() != v * num_times {
            return Err(Error::ShapeMismatch("count tensor length"));
        }
        Ok(Self { grid_shape, num_times, counts })
    }

    pub fn num_voxels(&self) -> usize {
        self.grid_shape.iter().product()
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        let v = self.num_voxels();
        &self.counts[t * v..(t + 1) * v]
    }

    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        if self.grid_shape != config.grid_shape {
            return Err(Error::ShapeMismatch("observation grid differs from config"));
        }
        if self.num_times != config.num_times {
            return Err(Error::ShapeMismatch("observation time count differs from config"));
        }
        Ok(())
    }
}

/// Voxel-center coordinates of a grid, precomputed.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub shape: Vec<usize>,
    pub coords: Vec<Vec3>,
}

impl VoxelGrid {
    pub fn new(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        let mut coords = Vec::with_capacity(n);
        for idx in 0..n {
            coords.push(voxel_coords(shape, idx));
        }
        Self { shape: shape.to_vec(), coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Coordinates of flat voxel index `idx` (row-major, axis 0 slowest).
pub fn voxel_coords(shape: &[usize], mut idx: usize) -> Vec3 {
    let mut out = [0.0; MAX_DIM];
    for k in (0..shape.len()).rev() {
        out[k] = (idx % shape[k]) as f64;
        idx /= shape[k];
    }
    out
}

/// Flat index of integer voxel coordinates.
pub fn voxel_index(shape: &[usize], coords: &[usize]) -> usize {
    coords.iter().zip(shape).fold(0, |acc, (&c, &n)| acc * n + c)
}

/// Isotropic Gaussian scalar kernel `k(x, y) = exp(−‖x−y‖²/(2σ²))`, and its
/// gradient with respect to the first argument.
#[inline]
pub(crate) fn gaussian_kernel(x: &Vec3, y: &Vec3, dim: usize, bandwidth: f64) -> (f64, Vec3) {
    let inv_var = 1.0 / (bandwidth * bandwidth);
    let mut diff = [0.0; MAX_DIM];
    let mut sq = 0.0;
    for k in 0..dim {
        diff[k] = x[k] - y[k];
        sq += diff[k] * diff[k];
    }
    let value = math::exp(-0.5 * sq * inv_var);
    let mut grad = [0.0; MAX_DIM];
    for k in 0..dim {
        grad[k] = -diff[k] * inv_var * value;
    }
    (value, grad)
}

/// Kernel value and `∇₁k(x, y)` for `dim`-vectors `x`, `y`.
pub fn kernel_eval(x: &[f64], y: &[f64], bandwidth: f64) -> Result<(f64, Vec<f64>)> {
    if x.len() != y.len() || x.is_empty() || x.len() > MAX_DIM {
        return Err(Error::ShapeMismatch("kernel arguments"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) || !bandwidth.is_finite() {
        return Err(Error::NonFinite("kernel argument"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidConfig("kernel bandwidth must be positive"));
    }
    let dim = x.len();
    let mut a = [0.0; MAX_DIM];
    let mut b = [0.0; MAX_DIM];
    a[..dim].copy_from_slice(x);
    b[..dim].copy_from_slice(y);
    let (value, grad) = gaussian_kernel(&a, &b, dim, bandwidth);
    Ok((value, grad[..dim].to_vec()))
}

/// `u_t(x) = Σ_i k(x, x_i) p_{i,t}`.
pub fn displacement_at(x: &[f64], catalogue: &Catalogue, t: usize, config: &ModelConfig) -> Result<Vec3> {
    config.check_time(t)?;
    let dim = config.dim;
    let mut point = [0.0; MAX_DIM];
    point[..dim].copy_from_slice(&x[..dim]);
    Ok(displacement_unchecked(&point, catalogue, t, config))
}

#[inline]
pub(crate) fn displacement_unchecked(point: &Vec3, catalogue: &Catalogue, t: usize, config: &ModelConfig) -> Vec3 {
    let dim = config.dim;
    let mut u = [0.0; MAX_DIM];
    for i in 0..catalogue.num_sources {
        let (k, _) = gaussian_kernel(point, &catalogue.position_vec(i), dim, config.kernel_bandwidth);
        let p = catalogue.momentum(i, t);
        for a in 0..dim {
            u[a] += k * p[a];
        }
    }
    u
}

/// Warped template `φ_t(x_i) = x_i + u_t(x_i)` for every source.
pub fn warp_template(catalogue: &Catalogue, t: usize, config: &ModelConfig) -> Result<Vec<Vec3>> {
    config.check_time(t)?;
    let dim = config.dim;
    Ok((0..catalogue.num_sources)
        .map(|i| {
            let x = catalogue.position_vec(i);
            let u = displacement_unchecked(&x, catalogue, t, config);
            let mut out = [0.0; MAX_DIM];
            for a in 0..dim {
                out[a] = x[a] + u[a];
            }
            out
        })
        .collect())
}

/// Gaussian point spread function `ψ(r) = (2π)^(−d/2) |Σ|^(−1/2) exp(−½ rᵀΣ⁻¹r)`.
#[derive(Debug, Clone, Copy)]
pub struct Psf {
    cov: SpdMatrix,
    norm: f64,
    // Σ⁻¹ = Lᵀ diag(d) L with L unit lower triangular; the last axis then
    // enters the exponent only through d[last] (v − c)²
    split_d: Vec3,
    split_l: [[f64; MAX_DIM]; MAX_DIM],
}

impl Psf {
    pub fn new(cov: SpdMatrix) -> Self {
        let d = cov.dim() as f64;
        let norm = math::exp(-0.5 * d * math::ln(2.0 * core::f64::consts::PI) - 0.5 * cov.log_det());
        let dim = cov.dim();
        let mut a = [[0.0; MAX_DIM]; MAX_DIM];
        for (r, row) in a.iter_mut().enumerate().take(dim) {
            for (c, v) in row.iter_mut().enumerate().take(dim) {
                *v = cov.inverse_get(r, c);
            }
        }
        // eliminate from the last axis down
        let mut split_d = [0.0; MAX_DIM];
        let mut split_l = [[0.0; MAX_DIM]; MAX_DIM];
        for k in (0..dim).rev() {
            let dk = a[k][k];
            split_d[k] = dk;
            split_l[k][k] = 1.0;
            for j in 0..k {
                split_l[k][j] = a[k][j] / dk;
            }
            for i in 0..k {
                for j in 0..k {
                    a[i][j] -= a[i][k] * a[k][j] / dk;
                }
            }
        }
        Self { cov, norm, split_d, split_l }
    }

    pub fn from_row_major(dim: usize, cov: &[f64]) -> Result<Self> {
        Ok(Self::new(SpdMatrix::new(dim, cov)?))
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn peak(&self) -> f64 {
        self.norm
    }

    #[inline]
    pub fn density(&self, r: &Vec3) -> f64 {
        self.norm * math::exp(-0.5 * self.cov.inv_quad(r))
    }

    /// Density and gradient `∇ψ(r) = −Σ⁻¹ r ψ(r)`.
    #[inline]
    pub fn eval(&self, r: &Vec3) -> (f64, Vec3) {
        let w = self.cov.solve(r);
        let q: f64 = (0..self.cov.dim()).map(|k| r[k] * w[k]).sum();
        let density = self.norm * math::exp(-0.5 * q);
        let mut grad = [0.0; MAX_DIM];
        for k in 0..self.cov.dim() {
            grad[k] = -w[k] * density;
        }
        (density, grad)
    }

    /// Writes `ψ(x − center)` for every voxel center of `shape` into `out`
    /// (row-major). Along each innermost-axis line the density is a scaled
    /// 1-D Gaussian, advanced by multiplicative recurrence outward from its
    /// largest value; relative error grows by about one ulp per voxel.
    pub fn density_on_grid(&self, center: &Vec3, shape: &[usize], out: &mut [f64]) {
        let dim = shape.len();
        let last = dim - 1;
        let n_last = shape[last];
        let a = self.split_d[last];
        let beta = math::exp(-a);
        let rows = out.len() / n_last;
        debug_assert_eq!(rows * n_last, out.len());
        for row in 0..rows {
            let mut r = [0.0; MAX_DIM];
            let mut rem = row;
            for k in (0..last).rev() {
                r[k] = (rem % shape[k]) as f64 - center[k];
                rem /= shape[k];
            }
            let mut e = 0.0;
            for k in 0..last {
                let mut z = r[k];
                for j in 0..k {
                    z += self.split_l[k][j] * r[j];
                }
                e += self.split_d[k] * z * z;
            }
            let mut c = center[last];
            for j in 0..last {
                c -= self.split_l[last][j] * r[j];
            }
            let scale = self.norm * math::exp(-0.5 * e);
            let line = &mut out[row * n_last..(row + 1) * n_last];
            let v0 = math::round(c).clamp(0.0, (n_last - 1) as f64);
            let d0 = v0 - c;
            let g0 = math::exp(-0.5 * a * d0 * d0);
            let v0 = v0 as usize;
            line[v0] = scale * g0;
            let (mut g, mut ratio) = (g0, math::exp(-a * d0 - 0.5 * a));
            for val in line[v0 + 1..].iter_mut() {
                g *= ratio;
                ratio *= beta;
                *val = scale * g;
            }
            let (mut g, mut ratio) = (g0, math::exp(a * d0 - 0.5 * a));
            for val in line[..v0].iter_mut().rev() {
                g *= ratio;
                ratio *= beta;
                *val = scale * g;
            }
        }
    }
}

/// PSF density and gradient at `r` for covariance `psf`.
pub fn psf_eval(r: &[f64], psf: &Psf) -> Result<(f64, Vec<f64>)> {
    let dim = psf.cov().dim();
    if r.len() != dim {
        return Err(Error::ShapeMismatch("psf argument"));
    }
    let mut v = [0.0; MAX_DIM];
    v[..dim].copy_from_slice(r);
    let (d, g) = psf.eval(&v);
    Ok((d, g[..dim].to_vec()))
}

/// Foreground intensity `λ_t(x) = Σ_i f_{i,t} ψ(x − φ_t(x_i))` at every
/// voxel center. The background is not added.
pub fn render_intensity(catalogue: &Catalogue, t: usize, config: &ModelConfig) -> Result<IntensityField> {
    let grid = VoxelGrid::new(&config.grid_shape);
    render_on_grid(catalogue, t, config, &Psf::new(config.psf_cov), &grid)
}

pub(crate) fn render_on_grid(
    catalogue: &Catalogue,
    t: usize,
    config: &ModelConfig,
    psf: &Psf,
    grid: &VoxelGrid,
) -> Result<IntensityField> {
    let warped = warp_template(catalogue, t, config)?;
    let mut values = vec![0.0; grid.len()];
    let mut psi = vec![0.0; grid.len()];
    for (i, phi) in warped.iter().enumerate() {
        let f = catalogue.fluor(i, t);
        if f == 0.0 {
            continue;
        }
        psf.density_on_grid(phi, &grid.shape, &mut psi);
        for (v, d) in values.iter_mut().zip(&psi) {
            *v += f * d;
        }
    }
    Ok(IntensityField { time_index: t, values })
}

/// Renders every time point.
pub fn render_all(catalogue: &Catalogue, config: &ModelConfig) -> Result<Vec<IntensityField>> {
    let grid = VoxelGrid::new(&config.grid_shape);
    let psf = Psf::new(config.psf_cov);
    (0..config.num_times).map(|t| render_on_grid(catalogue, t, config, &psf, &grid)).collect()
}

/// Samples `u_t` at voxel centers every `stride` voxels per axis.
pub fn rasterize_displacement(
    catalogue: &Catalogue,
    t: usize,
    config: &ModelConfig,
    stride: usize,
) -> Result<DisplacementField> {
    config.check_time(t)?;
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be >= 1"));
    }
    let sub_shape: Vec<usize> = config.grid_shape.iter().map(|&n| n.div_ceil(stride)).collect();
    let n: usize = sub_shape.iter().product();
    let mut sample_points = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for idx in 0..n {
        let mut p = voxel_coords(&sub_shape, idx);
        for c in p.iter_mut().take(config.dim) {
            *c *= stride as f64;
        }
        vectors.push(displacement_unchecked(&p, catalogue, t, config));
        sample_points.push(p);
    }
    Ok(DisplacementField { time_index: t, sample_points, vectors })
}
