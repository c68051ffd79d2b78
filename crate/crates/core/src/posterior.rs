//! Unconstrained reparameterization of the catalogue, the potential
//! `U = −log π` and its analytic gradient.
//!
//! Layout of the flat parameter vector:
//! `[positions (I·dim) | fluorescence (I·T) | momenta (I·T·dim) | background]`.
//! Positions use a per-axis logistic map onto `(0, L_k)`, fluorescence and
//! background a log map, momenta are left unchanged. The log-Jacobian of the
//! map is included in `U`, so sampling `U` in unconstrained space targets
//! the posterior over the constrained catalogue.
//!
//! Constant convention: `U` drops `log N!` and every normalization constant
//! that does not depend on θ (including `I·T·log κ`).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, MAX_DIM};
use crate::model::{gaussian_kernel, Catalogue, ModelConfig, ObservationStack, Psf, VoxelGrid};

/// Maps catalogue indices onto offsets of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterLayout {
    pub dim: usize,
    pub num_sources: usize,
    pub num_times: usize,
}

impl ParameterLayout {
    pub fn new(config: &ModelConfig) -> Self {
        Self { dim: config.dim, num_sources: config.num_sources, num_times: config.num_times }
    }

    /// `m = dim·I + I·T + dim·I·T + 1`.
    pub fn len(&self) -> usize {
        let (d, i, t) = (self.dim, self.num_sources, self.num_times);
        d * i + i * t + d * i * t + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn position(&self, i: usize, axis: usize) -> usize {
        i * self.dim + axis
    }

    #[inline]
    pub fn fluorescence_start(&self) -> usize {
        self.dim * self.num_sources
    }

    #[inline]
    pub fn fluor(&self, i: usize, t: usize) -> usize {
        self.fluorescence_start() + i * self.num_times + t
    }

    #[inline]
    pub fn momenta_start(&self) -> usize {
        self.fluorescence_start() + self.num_sources * self.num_times
    }

    #[inline]
    pub fn momentum(&self, i: usize, t: usize, axis: usize) -> usize {
        self.momenta_start() + (i * self.num_times + t) * self.dim + axis
    }

    #[inline]
    pub fn background(&self) -> usize {
        self.len() - 1
    }

    /// Human-readable name of each coordinate, e.g. `x[0][1]`, `f[1][3]`,
    /// `p[0][2][1]`, `lambda0`.
    pub fn names(&self) -> Vec<alloc::string::String> {
        use alloc::format;
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.num_sources {
            for a in 0..self.dim {
                out.push(format!("x[{i}][{a}]"));
            }
        }
        for i in 0..self.num_sources {
            for t in 0..self.num_times {
                out.push(format!("f[{i}][{t}]"));
            }
        }
        for i in 0..self.num_sources {
            for t in 0..self.num_times {
                for a in 0..self.dim {
                    out.push(format!("p[{i}][{t}][{a}]"));
                }
            }
        }
        out.push("lambda0".into());
        out
    }
}

/// A point in unconstrained parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub layout: ParameterLayout,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(layout: ParameterLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::ShapeMismatch("parameter vector length"));
        }
        Ok(Self { layout, values })
    }
}

/// Catalogue → unconstrained coordinates. Fails on boundary-exact values.
pub fn to_unconstrained(catalogue: &Catalogue, config: &ModelConfig) -> Result<ParameterVector> {
    catalogue.validate(config)?;
    let layout = ParameterLayout::new(config);
    let ext = config.extents();
    let mut values = vec![0.0; layout.len()];
    for i in 0..catalogue.num_sources {
        for (a, &x) in catalogue.position(i).iter().enumerate() {
            let l = ext[a];
            if !(x > 0.0 && x < l) {
                return Err(Error::NonInterior("position on the domain boundary"));
            }
            values[layout.position(i, a)] = math::ln(x / (l - x));
        }
        for t in 0..catalogue.num_times {
            let f = catalogue.fluor(i, t);
            if !(f > 0.0) {
                return Err(Error::NonInterior("zero fluorescence"));
            }
            values[layout.fluor(i, t)] = math::ln(f);
            let p = catalogue.momentum(i, t);
            for a in 0..catalogue.dim {
                values[layout.momentum(i, t, a)] = p[a];
            }
        }
    }
    if !(catalogue.background > 0.0) {
        return Err(Error::NonInterior("zero background"));
    }
    values[layout.background()] = math::ln(catalogue.background);
    Ok(ParameterVector { layout, values })
}

/// Inverse of [`to_unconstrained`]; total on finite input.
pub fn to_constrained(pv: &ParameterVector, config: &ModelConfig) -> Catalogue {
    constrain_slice(&pv.values, &pv.layout, config)
}

pub(crate) fn constrain_slice(values: &[f64], layout: &ParameterLayout, config: &ModelConfig) -> Catalogue {
    let ext = config.extents();
    let mut c = Catalogue::zeros(layout.dim, layout.num_sources, layout.num_times);
    for i in 0..layout.num_sources {
        for a in 0..layout.dim {
            // sigmoid may round to exactly 0 or 1; the closed box is still valid
            c.positions[i * layout.dim + a] = ext[a] * math::sigmoid(values[layout.position(i, a)]);
        }
        for t in 0..layout.num_times {
            c.set_fluor(i, t, math::exp(values[layout.fluor(i, t)]));
            for a in 0..layout.dim {
                c.momenta[(i * layout.num_times + t) * layout.dim + a] = values[layout.momentum(i, t, a)];
            }
        }
    }
    c.background = math::exp(values[layout.background()]);
    c
}

/// A differentiable potential energy over a flat coordinate vector.
pub trait Potential {
    fn dim(&self) -> usize;

    /// `U(q)`; `+∞` marks an invalid point.
    fn potential(&self, q: &[f64]) -> f64;

    /// Writes `∇U(q)` into `grad` and returns `U(q)`.
    fn potential_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64;

    /// Writes `∇U(q)` into `grad` without necessarily evaluating `U`.
    /// Returns `false` where `U(q)` is infinite.
    fn gradient(&self, q: &[f64], grad: &mut [f64]) -> bool {
        self.potential_and_gradient(q, grad).is_finite()
    }
}

/// Table of `ln n!` for `n ≤ max`.
#[derive(Debug, Clone)]
pub struct LogFactorial {
    table: Vec<f64>,
}

impl LogFactorial {
    pub fn new(max: u32) -> Self {
        let mut table = Vec::with_capacity(max as usize + 1);
        let mut acc = 0.0;
        table.push(0.0);
        for k in 1..=max {
            acc += math::ln(k as f64);
            table.push(acc);
        }
        Self { table }
    }

    /// `ln n!`, falling back to `lgamma` beyond the table.
    pub fn get(&self, n: u32) -> f64 {
        match self.table.get(n as usize) {
            Some(&v) => v,
            None => libm::lgamma(n as f64 + 1.0),
        }
    }
}

/// Full Poisson log-pmf `N ln μ − μ − ln N!`.
pub fn poisson_log_pmf(n: u32, mean: f64, log_fact: &LogFactorial) -> f64 {
    if mean <= 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * math::ln(mean) - mean - log_fact.get(n)
}

/// Immutable posterior: observations, model configuration and caches.
#[derive(Debug, Clone)]
pub struct PosteriorContext {
    config: ModelConfig,
    obs: ObservationStack,
    layout: ParameterLayout,
    psf: Psf,
    grid: VoxelGrid,
    log_factorial: LogFactorial,
}

impl PosteriorContext {
    pub fn new(obs: ObservationStack, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        obs.check_against(&config)?;
        let max = obs.counts.iter().copied().max().unwrap_or(0);
        Ok(Self {
            layout: ParameterLayout::new(&config),
            psf: Psf::new(config.psf_cov),
            grid: VoxelGrid::new(&config.grid_shape),
            log_factorial: LogFactorial::new(max),
            config,
            obs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn observations(&self) -> &ObservationStack {
        &self.obs
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn psf(&self) -> &Psf {
        &self.psf
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn log_factorial(&self) -> &LogFactorial {
        &self.log_factorial
    }

    /// Full-pmf log-likelihood `Σ_t Σ_x log Poisson(N | λ + λ0)` of a
    /// constrained catalogue, including `−log N!`.
    pub fn log_likelihood(&self, catalogue: &Catalogue) -> Result<f64> {
        let mut total = 0.0;
        let psf = self.psf;
        for t in 0..self.config.num_times {
            let field = crate::model::render_on_grid(catalogue, t, &self.config, &psf, &self.grid)?;
            for (&n, &lam) in self.obs.frame(t).iter().zip(&field.values) {
                total += poisson_log_pmf(n, lam + catalogue.background, &self.log_factorial);
            }
        }
        Ok(total)
    }

    /// `U(q)` and optionally its gradient. With `need_value` unset the
    /// likelihood value is skipped and only `0` or the `+∞` sentinel is
    /// returned.
    fn evaluate(&self, q: &[f64], grad: Option<&mut [f64]>, need_value: bool) -> f64 {
        let layout = &self.layout;
        let cfg = &self.config;
        let (dim, n_src, n_t) = (cfg.dim, cfg.num_sources, cfg.num_times);
        assert_eq!(q.len(), layout.len(), "parameter vector length");
        if q.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let ext = cfg.extents();

        // constrained values plus Jacobian bookkeeping
        let mut x = vec![[0.0; MAX_DIM]; n_src];
        let mut dx_ds = vec![[0.0; MAX_DIM]; n_src];
        let mut dlogj_ds = vec![[0.0; MAX_DIM]; n_src];
        let mut u = 0.0;
        let mut log_jac = 0.0;
        for i in 0..n_src {
            for a in 0..dim {
                let s = q[layout.position(i, a)];
                let sg = math::sigmoid(s);
                let sg_neg = math::sigmoid(-s);
                x[i][a] = ext[a] * sg;
                dx_ds[i][a] = ext[a] * sg * sg_neg;
                dlogj_ds[i][a] = sg_neg - sg;
                log_jac += math::ln(ext[a]) + math::ln_sigmoid(s) + math::ln_sigmoid(-s);
            }
        }
        let mut f = vec![0.0; n_src * n_t];
        for (k, fv) in f.iter_mut().enumerate() {
            let s = q[layout.fluorescence_start() + k];
            *fv = math::exp(s);
            log_jac += s;
            u += *fv / cfg.fluor_scale;
        }
        let mut p = vec![[0.0; MAX_DIM]; n_src * n_t];
        for (k, pv) in p.iter_mut().enumerate() {
            for a in 0..dim {
                pv[a] = q[layout.momenta_start() + k * dim + a];
            }
            u += 0.5 * cfg.motion_cov.inv_quad(pv);
        }
        let s_bg = q[layout.background()];
        let bg = math::exp(s_bg);
        log_jac += s_bg;
        let nu2 = cfg.background_scale * cfg.background_scale;
        u += bg * bg / (2.0 * nu2);

        // gradients with respect to constrained values
        let want_grad = grad.is_some();
        let mut g_x = vec![[0.0; MAX_DIM]; n_src];
        let mut g_f = vec![0.0; n_src * n_t];
        let mut g_p = vec![[0.0; MAX_DIM]; n_src * n_t];
        let mut g_bg = 0.0;

        let mut kern = vec![0.0; n_src * n_src];
        let mut kern_grad = vec![[0.0; MAX_DIM]; n_src * n_src];
        for i in 0..n_src {
            for j in 0..n_src {
                let (k, g) = gaussian_kernel(&x[i], &x[j], dim, cfg.kernel_bandwidth);
                kern[i * n_src + j] = k;
                kern_grad[i * n_src + j] = g;
            }
        }

        let grid_len = self.grid.len();
        let mut phi = vec![[0.0; MAX_DIM]; n_src];
        let mut psi = vec![0.0; n_src * grid_len];
        // Σ_x r ψ_i (x − φ_i), per source
        let mut moment = vec![[0.0; MAX_DIM]; n_src];
        for t in 0..n_t {
            for i in 0..n_src {
                phi[i] = x[i];
                for j in 0..n_src {
                    let k = kern[i * n_src + j];
                    let pj = &p[j * n_t + t];
                    for a in 0..dim {
                        phi[i][a] += k * pj[a];
                    }
                }
                self.psf.density_on_grid(&phi[i], &self.grid.shape, &mut psi[i * grid_len..(i + 1) * grid_len]);
            }
            moment.iter_mut().for_each(|m| *m = [0.0; MAX_DIM]);
            let counts = self.obs.frame(t);
            for (v, (vox, &n)) in self.grid.coords.iter().zip(counts).enumerate() {
                let mut lam = bg;
                for i in 0..n_src {
                    lam += f[i * n_t + t] * psi[i * grid_len + v];
                }
                let n = n as f64;
                if lam <= 0.0 {
                    if n > 0.0 {
                        return f64::INFINITY;
                    }
                    // N = 0 and λ = 0 contributes nothing; r = −1
                } else if need_value {
                    u += if n == 0.0 { lam } else { lam - n * math::ln(lam) };
                }
                if want_grad {
                    let resid = if n == 0.0 { -1.0 } else { n / lam - 1.0 };
                    g_bg -= resid;
                    for i in 0..n_src {
                        let w = resid * psi[i * grid_len + v];
                        g_f[i * n_t + t] -= w;
                        for a in 0..dim {
                            moment[i][a] += w * (vox[a] - phi[i][a]);
                        }
                    }
                }
            }
            if !want_grad {
                continue;
            }
            // ∂U/∂φ_i = −f_i Σ⁻¹ Σ_x r ψ_i (x − φ_i)
            for i in 0..n_src {
                let fi = f[i * n_t + t];
                let w = self.psf.cov().solve(&moment[i]);
                let mut g_phi = [0.0; MAX_DIM];
                for a in 0..dim {
                    g_phi[a] = -fi * w[a];
                }
                // φ_i = x_i + Σ_j k(x_i, x_j) p_j
                for a in 0..dim {
                    g_x[i][a] += g_phi[a];
                }
                for j in 0..n_src {
                    let k = kern[i * n_src + j];
                    let kg = &kern_grad[i * n_src + j];
                    let pj = &p[j * n_t + t];
                    let proj = math::dot(&g_phi[..dim], &pj[..dim]);
                    for a in 0..dim {
                        g_p[j * n_t + t][a] += k * g_phi[a];
                        // ∇₁k on x_i, ∇₂k = −∇₁k on x_j
                        g_x[i][a] += proj * kg[a];
                        g_x[j][a] -= proj * kg[a];
                    }
                }
            }
        }

        u -= log_jac;
        if !u.is_finite() {
            return f64::INFINITY;
        }
        if !need_value {
            u = 0.0;
        }
        if let Some(out) = grad {
            for i in 0..n_src {
                for a in 0..dim {
                    out[layout.position(i, a)] = g_x[i][a] * dx_ds[i][a] - dlogj_ds[i][a];
                }
            }
            for k in 0..n_src * n_t {
                let gf = g_f[k] + 1.0 / cfg.fluor_scale;
                out[layout.fluorescence_start() + k] = gf * f[k] - 1.0;
                let prior = cfg.motion_cov.solve(&p[k]);
                for a in 0..dim {
                    out[layout.momenta_start() + k * dim + a] = g_p[k][a] + prior[a];
                }
            }
            out[layout.background()] = (g_bg + bg / nu2) * bg - 1.0;
        }
        u
    }
}

impl Potential for PosteriorContext {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn potential(&self, q: &[f64]) -> f64 {
        self.evaluate(q, None, true)
    }

    fn potential_and_gradient(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(q, Some(grad), true)
    }

    fn gradient(&self, q: &[f64], grad: &mut [f64]) -> bool {
        self.evaluate(q, Some(grad), false).is_finite()
    }
}

/// `U(pv)` under `ctx`.
pub fn potential(pv: &ParameterVector, ctx: &PosteriorContext) -> f64 {
    ctx.potential(&pv.values)
}

/// Analytic `∇U(pv)`.
pub fn grad_potential(pv: &ParameterVector, ctx: &PosteriorContext) -> Vec<f64> {
    let mut g = vec![0.0; pv.values.len()];
    ctx.potential_and_gradient(&pv.values, &mut g);
    g
}

/// Central differences `(U(q + h e_j) − U(q − h e_j)) / 2h`.
pub fn finite_diff_gradient<P: Potential + ?Sized>(target: &P, q: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut work = q.to_vec();
    (0..q.len())
        .map(|j| {
            let orig = work[j];
            work[j] = orig + h;
            let up = target.potential(&work);
            work[j] = orig - h;
            let down = target.potential(&work);
            work[j] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖∞ / max(‖b‖∞, 1e−12)`.
pub fn relative_linf_error(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| math::abs(x - y)).fold(0.0, f64::max);
    let den = b.iter().map(|y| math::abs(*y)).fold(0.0, f64::max).max(1e-12);
    num / den
}

/// Vector-valued helper: the constrained catalogue flattened in layout
/// order (positions, fluorescence, momenta, background).
pub fn flatten_catalogue(catalogue: &Catalogue) -> Vec<f64> {
    let mut out = Vec::with_capacity(
        catalogue.positions.len() + catalogue.fluorescence.len() + catalogue.momenta.len() + 1,
    );
    out.extend_from_slice(&catalogue.positions);
    out.extend_from_slice(&catalogue.fluorescence);
    out.extend_from_slice(&catalogue.momenta);
    out.push(catalogue.background);
    out
}
