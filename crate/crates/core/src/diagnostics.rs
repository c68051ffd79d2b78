//! Posterior summaries: moments, order-statistic quantiles, effective
//! sample size (Geyer's initial monotone sequence on the multi-chain
//! autocorrelation) and split-R̂.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::evaluation::match_catalogues;
use crate::math;
use crate::posterior::{flatten_catalogue, ParameterLayout};
use crate::sampler::Chain;

/// Quantile levels reported for every parameter.
pub const QUANTILE_LEVELS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub quantiles: [f64; 5],
    /// `None` when the draws are constant (degenerate).
    pub ess: Option<f64>,
    /// Only with two or more chains.
    pub rhat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub parameters: Vec<ParameterSummary>,
    pub mean_accept: f64,
    pub num_chains: usize,
    pub draws_per_chain: usize,
    pub divergences: usize,
    /// Draws whose optimal matching to the chain's starting positions is
    /// not the identity, summed over chains. Nonzero values indicate label
    /// switching.
    pub label_switch_draws: usize,
}

/// Order statistic at level `p`: the `⌈p·n⌉`-th smallest draw.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = (math::ceil(p * n as f64) as usize).clamp(1, n);
    sorted[k - 1]
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    let m = mean(xs);
    let mut s = 0.0;
    for i in 0..n - lag {
        s += (xs[i] - m) * (xs[i + lag] - m);
    }
    s / n as f64
}

/// Multi-chain effective sample size, capped at the total draw count.
/// `None` for constant draws or fewer than four draws per chain.
pub fn effective_sample_size(chains: &[&[f64]]) -> Option<f64> {
    let m = chains.len();
    let n = chains.first()?.len();
    if n < 4 || chains.iter().any(|c| c.len() != n) {
        return None;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| sample_var(c)).sum::<f64>() / m as f64;
    if !(w > 0.0) {
        return None;
    }
    let b_over_n = if m > 1 { sample_var(&means) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;

    let rho = |lag: usize| {
        let acov = chains.iter().map(|c| autocovariance(c, lag)).sum::<f64>() / m as f64;
        1.0 - (w - acov) / var_plus
    };

    // Geyer: sum adjacent pairs while positive, enforcing monotonicity
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if !(pair > 0.0) {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    let total = (m * n) as f64;
    let tau = tau.max(1.0 / math::ln(total).max(1.0));
    Some((total / tau).min(total))
}

/// Split-R̂: each chain is halved and the usual potential scale reduction
/// is computed over the halves. `None` for fewer than two chains.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let n = chains[0].len();
    let half = n / 2;
    if half < 2 || chains.iter().any(|c| c.len() != n) {
        return None;
    }
    let mut pieces: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        pieces.push(&c[..half]);
        pieces.push(&c[n - half..]);
    }
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let w = pieces.iter().map(|p| sample_var(p)).sum::<f64>() / pieces.len() as f64;
    if !(w > 0.0) {
        return None;
    }
    let h = half as f64;
    let var_plus = (h - 1.0) / h * w + sample_var(&means);
    Some(math::sqrt(var_plus / w))
}

fn summarize_parameter(name: String, chains: &[&[f64]]) -> ParameterSummary {
    let mut all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let mu = mean(&all);
    let sd = if all.len() > 1 { math::sqrt(sample_var(&all)) } else { 0.0 };
    all.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let mut quantiles = [0.0; 5];
    for (q, &p) in quantiles.iter_mut().zip(&QUANTILE_LEVELS) {
        *q = quantile_sorted(&all, p);
    }
    ParameterSummary { name, mean: mu, sd, quantiles, ess: effective_sample_size(chains), rhat: split_rhat(chains) }
}

/// Summaries of raw draw matrices (one `Vec` per draw) from one or more
/// chains of equal length.
pub fn summarize_draws(chains: &[Vec<Vec<f64>>], names: &[String]) -> Result<Vec<ParameterSummary>> {
    let first = chains.first().ok_or(Error::EmptyChain)?;
    let n = first.len();
    if n == 0 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::EmptyChain);
    }
    let columns: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .map(|c| (0..names.len()).map(|j| c.iter().map(|d| d[j]).collect()).collect())
        .collect();
    Ok(names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let per_chain: Vec<&[f64]> = columns.iter().map(|c| c[j].as_slice()).collect();
            summarize_parameter(name.clone(), &per_chain)
        })
        .collect())
}

/// Posterior summary in constrained coordinates for one or more chains.
pub fn summarize_chain(chains: &[Chain]) -> Result<ChainSummary> {
    let first = chains.first().ok_or(Error::EmptyChain)?;
    let n = first.len();
    if n == 0 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::EmptyChain);
    }
    let d0 = &first.draws[0];
    let layout = ParameterLayout { dim: d0.dim, num_sources: d0.num_sources, num_times: d0.num_times };
    let draws: Vec<Vec<Vec<f64>>> =
        chains.iter().map(|c| c.draws.iter().map(flatten_catalogue).collect()).collect();
    let parameters = summarize_draws(&draws, &layout.names())?;

    let mut label_switch_draws = 0;
    for c in chains {
        for d in &c.draws {
            let m = match_catalogues(&c.initial, d)?;
            if m.assignment.iter().enumerate().any(|(i, &j)| i != j) {
                label_switch_draws += 1;
            }
        }
    }
    let total_accept: f64 = chains.iter().map(|c| c.accept_probs.iter().sum::<f64>()).sum();
    Ok(ChainSummary {
        parameters,
        mean_accept: total_accept / (n * chains.len()) as f64,
        num_chains: chains.len(),
        draws_per_chain: n,
        divergences: chains.iter().map(|c| c.divergences).sum(),
        label_switch_draws,
    })
}
