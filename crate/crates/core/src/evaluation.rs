//! Scoring of inferred catalogues against ground truth and of intensity
//! reconstructions against raw counts.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, MAX_DIM};
use crate::model::{displacement_unchecked, voxel_index, warp_template, Catalogue, IntensityField, ModelConfig, ObservationStack};
use crate::posterior::{poisson_log_pmf, LogFactorial};

/// Minimum-cost square assignment. `cost` is row-major `n × n`; the result
/// maps row `i` to column `result[i]`. Among optimal assignments the
/// lexicographically smallest is returned.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    if n == 0 {
        return Vec::new();
    }
    let rows: Vec<usize> = (0..n).collect();
    let cols: Vec<usize> = (0..n).collect();
    let best = hungarian(cost, n, &rows, &cols).1;
    let tol = 1e-9 * best.abs().max(1.0);

    // fix rows in order, taking the smallest column that keeps optimality
    let mut out = Vec::with_capacity(n);
    let mut free_cols = cols;
    let mut fixed = 0.0;
    for i in 0..n {
        let rest_rows: Vec<usize> = ((i + 1)..n).collect();
        let mut chosen = None;
        for (k, &j) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
            let rest = if rest_rows.is_empty() { 0.0 } else { hungarian(cost, n, &rest_rows, &rest_cols).1 };
            if fixed + cost[i * n + j] + rest <= best + tol {
                chosen = Some(k);
                break;
            }
        }
        // rounding can in principle exclude every column; fall back to the
        // best completion
        let k = chosen.unwrap_or_else(|| {
            let mut best_k = 0;
            let mut best_v = f64::INFINITY;
            for (k, &j) in free_cols.iter().enumerate() {
                let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != j).collect();
                let rest = if rest_rows.is_empty() { 0.0 } else { hungarian(cost, n, &rest_rows, &rest_cols).1 };
                if cost[i * n + j] + rest < best_v {
                    best_v = cost[i * n + j] + rest;
                    best_k = k;
                }
            }
            best_k
        });
        let j = free_cols.remove(k);
        fixed += cost[i * n + j];
        out.push(j);
    }
    out
}

/// Shortest-augmenting-path Hungarian method on the sub-matrix selected by
/// `rows` × `cols` (equal lengths). Returns (assignment into `cols`, cost).
fn hungarian(cost: &[f64], stride: usize, rows: &[usize], cols: &[usize]) -> (Vec<usize>, f64) {
    let n = rows.len();
    debug_assert_eq!(n, cols.len());
    let c = |i: usize, j: usize| cost[rows[i - 1] * stride + cols[j - 1]];
    // 1-based potentials; column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[owner[j] - 1] = cols[j - 1];
    }
    let total = (0..n).map(|i| cost[rows[i] * stride + assign[i]]).sum();
    (assign, total)
}

/// Optimal correspondence between true and estimated sources.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `assignment[i]` is the estimate index matched to truth source `i`.
    pub assignment: Vec<usize>,
    pub total_cost: f64,
    pub distances: Vec<f64>,
}

fn position_distance(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Matches sources by Euclidean distance between template positions.
pub fn match_catalogues(truth: &Catalogue, est: &Catalogue) -> Result<MatchResult> {
    if truth.num_sources != est.num_sources || truth.dim != est.dim {
        return Err(Error::ShapeMismatch("catalogues must have the same number of sources"));
    }
    let n = truth.num_sources;
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = position_distance(truth.position(i), est.position(j));
        }
    }
    let assignment = solve_assignment(&cost, n);
    let distances: Vec<f64> = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    Ok(MatchResult { total_cost: distances.iter().sum(), assignment, distances })
}

/// Table-style scores. Fields not computed by a given scorer are `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub corr: Option<f64>,
    pub fluor_abs_err: Option<f64>,
    pub template_err: Option<f64>,
    pub deform_err: Option<f64>,
    /// `‖φ_t(x_i) − φ̂_t(x̂_π(i))‖`, a secondary deformation diagnostic.
    pub deform_err_matched: Option<f64>,
    pub momenta_err: Option<f64>,
    pub per_voxel_loglik: Option<f64>,
    pub rmse: Option<f64>,
    pub temporal_consistency: Option<f64>,
    pub peak_count_std: Option<f64>,
}

impl MetricsReport {
    /// Fills every `None` field of `self` from `other`.
    pub fn merge(mut self, other: &MetricsReport) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if self.$f.is_none() { self.$f = other.$f; } )* };
        }
        take!(
            corr,
            fluor_abs_err,
            template_err,
            deform_err,
            deform_err_matched,
            momenta_err,
            per_voxel_loglik,
            rmse,
            temporal_consistency,
            peak_count_std
        );
        self
    }
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / math::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

fn check_stack(fields: &[IntensityField], obs: &ObservationStack) -> Result<()> {
    if fields.len() != obs.num_times {
        return Err(Error::ShapeMismatch("intensity stack length differs from time count"));
    }
    if fields.iter().any(|f| f.values.len() != obs.num_voxels()) {
        return Err(Error::ShapeMismatch("intensity field size differs from grid"));
    }
    Ok(())
}

fn mean_log_likelihood(fields: &[IntensityField], background: f64, obs: &ObservationStack) -> f64 {
    let lf = LogFactorial::new(obs.counts.iter().copied().max().unwrap_or(0));
    let mut total = 0.0;
    for (t, field) in fields.iter().enumerate() {
        for (&n, &lam) in obs.frame(t).iter().zip(&field.values) {
            total += poisson_log_pmf(n, lam + background, &lf);
        }
    }
    total / obs.counts.len() as f64
}

/// Template, fluorescence, deformation and momenta errors after optimal
/// matching, intensity correlation pooled over voxels and times, and the
/// per-voxel Poisson log-likelihood of `obs` under `est`.
pub fn simulation_metrics(
    truth: &Catalogue,
    est: &Catalogue,
    est_intensity: &[IntensityField],
    truth_intensity: &[IntensityField],
    obs: &ObservationStack,
    config: &ModelConfig,
) -> Result<MetricsReport> {
    truth.validate(config)?;
    if est.dim != config.dim || est.num_times != config.num_times {
        return Err(Error::ShapeMismatch("estimate disagrees with config"));
    }
    obs.check_against(config)?;
    check_stack(est_intensity, obs)?;
    check_stack(truth_intensity, obs)?;

    let matching = match_catalogues(truth, est)?;
    let (n_src, n_t, dim) = (truth.num_sources, truth.num_times, truth.dim);
    let mut report = MetricsReport::default();

    let flat = |s: &[IntensityField]| s.iter().flat_map(|f| f.values.iter().copied()).collect::<Vec<_>>();
    report.corr = pearson(&flat(est_intensity), &flat(truth_intensity));
    report.per_voxel_loglik = Some(mean_log_likelihood(est_intensity, est.background, obs));

    if n_src > 0 {
        let it = (n_src * n_t) as f64;
        report.template_err = Some(matching.total_cost / n_src as f64);
        let mut fluor = 0.0;
        let mut mom = 0.0;
        let mut deform = 0.0;
        let mut deform_matched = 0.0;
        for t in 0..n_t {
            let true_warp = warp_template(truth, t, config)?;
            let est_warp = warp_template(est, t, config)?;
            for i in 0..n_src {
                let j = matching.assignment[i];
                fluor += math::abs(truth.fluor(i, t) - est.fluor(j, t));
                mom += position_distance(truth.momentum(i, t), est.momentum(j, t));
                let xi = truth.position_vec(i);
                let u_hat = displacement_unchecked(&xi, est, t, config);
                let mut at_truth = [0.0; MAX_DIM];
                for a in 0..dim {
                    at_truth[a] = xi[a] + u_hat[a];
                }
                deform += position_distance(&true_warp[i][..dim], &at_truth[..dim]);
                deform_matched += position_distance(&true_warp[i][..dim], &est_warp[j][..dim]);
            }
        }
        report.fluor_abs_err = Some(fluor / it);
        report.momenta_err = Some(mom / it);
        report.deform_err = Some(deform / it);
        report.deform_err_matched = Some(deform_matched / it);
    }
    Ok(report)
}

/// Local-peak detection parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakParams {
    pub min_distance: usize,
    pub threshold: f64,
}

impl PeakParams {
    /// `min_distance = 2`, `threshold = λ0 + 2√λ0`.
    pub fn for_background(background: f64) -> Self {
        Self { min_distance: 2, threshold: background + 2.0 * math::sqrt(background.max(0.0)) }
    }
}

/// Quality of an intensity reconstruction `λ̂ + λ̂0` against raw counts:
/// per-voxel log-likelihood, RMSE, temporal consistency and peak-count
/// variability. Peaks are detected on `λ̂_t + λ̂0`.
pub fn reconstruction_metrics(
    est_intensity: &[IntensityField],
    background: f64,
    obs: &ObservationStack,
    peaks: Option<PeakParams>,
) -> Result<MetricsReport> {
    check_stack(est_intensity, obs)?;
    let mut report = MetricsReport {
        per_voxel_loglik: Some(mean_log_likelihood(est_intensity, background, obs)),
        ..Default::default()
    };
    let v = obs.num_voxels() as f64;
    let mut rmse = 0.0;
    for (t, field) in est_intensity.iter().enumerate() {
        let sq: f64 = obs
            .frame(t)
            .iter()
            .zip(&field.values)
            .map(|(&n, &lam)| {
                let e = n as f64 - lam - background;
                e * e
            })
            .sum();
        rmse += math::sqrt(sq / v);
    }
    report.rmse = Some(rmse / est_intensity.len() as f64);

    if est_intensity.len() >= 2 {
        let first = &est_intensity[0].values;
        let mut acc = 0.0;
        for f in &est_intensity[1..] {
            // identical constant frames are perfectly consistent
            acc += pearson(first, &f.values).unwrap_or(if first == &f.values { 1.0 } else { 0.0 });
        }
        report.temporal_consistency = Some(acc / (est_intensity.len() - 1) as f64);

        let params = peaks.unwrap_or_else(|| PeakParams::for_background(background));
        let totals: Vec<IntensityField> = est_intensity
            .iter()
            .map(|f| IntensityField {
                time_index: f.time_index,
                values: f.values.iter().map(|v| v + background).collect(),
            })
            .collect();
        report.peak_count_std = Some(peak_stability(&totals, &obs.grid_shape, params.min_distance, params.threshold)?);
    }
    Ok(report)
}

/// Local maxima over a `(2·min_distance+1)^dim` window with value at least
/// `threshold`. A candidate must be ≥ every neighbor in its window and
/// strictly greater than at least one; survivors are suppressed greedily by
/// descending value (ties by lexicographic coordinate) so that kept peaks
/// are at least `min_distance` apart in Chebyshev distance.
pub fn detect_peaks(values: &[f64], shape: &[usize], min_distance: usize, threshold: f64) -> Vec<Vec<usize>> {
    let dim = shape.len();
    let n: usize = shape.iter().product();
    assert_eq!(values.len(), n, "field size must match the grid");
    let md = min_distance.max(1) as isize;

    let coords_of = |mut idx: usize| {
        let mut c = vec![0usize; dim];
        for k in (0..dim).rev() {
            c[k] = idx % shape[k];
            idx /= shape[k];
        }
        c
    };

    let mut candidates = Vec::new();
    let window = (2 * md + 1) as usize;
    let window_len = window.pow(dim as u32);
    for idx in 0..n {
        let v = values[idx];
        if !(v >= threshold) {
            continue;
        }
        let c = coords_of(idx);
        let mut is_max = true;
        let mut strictly_above_some = false;
        let mut offset = vec![0isize; dim];
        for w in 0..window_len {
            let mut rem = w;
            for k in (0..dim).rev() {
                offset[k] = (rem % window) as isize - md;
                rem /= window;
            }
            if offset.iter().all(|&o| o == 0) {
                continue;
            }
            let mut nb = vec![0usize; dim];
            let mut inside = true;
            for k in 0..dim {
                let p = c[k] as isize + offset[k];
                if p < 0 || p >= shape[k] as isize {
                    inside = false;
                    break;
                }
                nb[k] = p as usize;
            }
            if !inside {
                continue;
            }
            let nv = values[voxel_index(shape, &nb)];
            if nv > v {
                is_max = false;
                break;
            }
            if nv < v {
                strictly_above_some = true;
            }
        }
        if is_max && strictly_above_some {
            candidates.push((v, c));
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then_with(|| a.1.cmp(&b.1)));

    let mut kept: Vec<Vec<usize>> = Vec::new();
    for (_, c) in candidates {
        let far = kept.iter().all(|k| {
            k.iter().zip(&c).map(|(&a, &b)| (a as isize - b as isize).unsigned_abs()).max().unwrap_or(0)
                >= min_distance.max(1)
        });
        if far {
            kept.push(c);
        }
    }
    kept
}

/// Population standard deviation of per-time peak counts.
pub fn peak_stability(fields: &[IntensityField], shape: &[usize], min_distance: usize, threshold: f64) -> Result<f64> {
    if fields.len() < 2 {
        return Err(Error::TooFewTimes);
    }
    let counts: Vec<f64> =
        fields.iter().map(|f| detect_peaks(&f.values, shape, min_distance, threshold).len() as f64).collect();
    Ok(population_std(&counts))
}

pub fn population_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    math::sqrt(xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}
