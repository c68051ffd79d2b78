//! JSON reports and the per-(I, T) summary table.
//!
//! A table cell is `median [p25, p75]` with linearly interpolated
//! percentiles (`p·(n−1)` between order statistics). Decimals per column:
//! Corr 2, fluorescence 1, template 2, deformation 2, momenta 2,
//! log-likelihood 1. Cells with no values print `-`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use synaptrace_core::diagnostics::ChainSummary;
use synaptrace_core::evaluation::MetricsReport;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDoc {
    pub corr: Option<f64>,
    pub fluor_abs_err: Option<f64>,
    pub template_err: Option<f64>,
    pub deform_err: Option<f64>,
    pub deform_err_matched: Option<f64>,
    pub momenta_err: Option<f64>,
    pub per_voxel_loglik: Option<f64>,
    pub rmse: Option<f64>,
    pub temporal_consistency: Option<f64>,
    pub peak_count_std: Option<f64>,
}

impl From<&MetricsReport> for MetricsDoc {
    fn from(m: &MetricsReport) -> Self {
        Self {
            corr: m.corr,
            fluor_abs_err: m.fluor_abs_err,
            template_err: m.template_err,
            deform_err: m.deform_err,
            deform_err_matched: m.deform_err_matched,
            momenta_err: m.momenta_err,
            per_voxel_loglik: m.per_voxel_loglik,
            rmse: m.rmse,
            temporal_consistency: m.temporal_consistency,
            peak_count_std: m.peak_count_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDoc {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// At 2.5%, 25%, 50%, 75%, 97.5%.
    pub quantiles: [f64; 5],
    pub ess: Option<f64>,
    pub rhat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub num_chains: usize,
    pub draws_per_chain: usize,
    pub mean_accept: f64,
    pub divergences: usize,
    pub label_switch_draws: usize,
    pub parameters: Vec<ParameterDoc>,
}

impl From<&ChainSummary> for SummaryDoc {
    fn from(s: &ChainSummary) -> Self {
        Self {
            num_chains: s.num_chains,
            draws_per_chain: s.draws_per_chain,
            mean_accept: s.mean_accept,
            divergences: s.divergences,
            label_switch_draws: s.label_switch_draws,
            parameters: s
                .parameters
                .iter()
                .map(|p| ParameterDoc {
                    name: p.name.clone(),
                    mean: p.mean,
                    sd: p.sd,
                    quantiles: p.quantiles,
                    ess: p.ess,
                    rhat: p.rhat,
                })
                .collect(),
        }
    }
}

/// Linearly interpolated percentile of sorted data, `p ∈ [0, 1]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of no data");
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub n: usize,
}

impl Spread {
    /// `None` without finite values; non-finite values are dropped.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self {
            median: percentile_sorted(&v, 0.5),
            p25: percentile_sorted(&v, 0.25),
            p75: percentile_sorted(&v, 0.75),
            n: v.len(),
        })
    }

    pub fn format(&self, decimals: usize) -> String {
        format!("{:.d$} [{:.d$}, {:.d$}]", self.median, self.p25, self.p75, d = decimals)
    }
}

pub const TABLE1_HEADER: [&str; 8] = [
    "I",
    "T",
    "Corr",
    "Fluorescence (abs)",
    "Template error",
    "Deformation error",
    "Momenta error",
    "Log-likelihood",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    #[serde(rename = "I")]
    pub num_sources: usize,
    #[serde(rename = "T")]
    pub num_times: usize,
    pub runs: usize,
    pub corr: Option<Spread>,
    pub fluorescence: Option<Spread>,
    pub template: Option<Spread>,
    pub deformation: Option<Spread>,
    pub momenta: Option<Spread>,
    pub loglik: Option<Spread>,
}

impl Table1Row {
    pub fn cells(&self) -> Vec<String> {
        let cell = |s: &Option<Spread>, d: usize| s.map_or_else(|| "-".to_string(), |s| s.format(d));
        vec![
            self.num_sources.to_string(),
            self.num_times.to_string(),
            cell(&self.corr, 2),
            cell(&self.fluorescence, 1),
            cell(&self.template, 2),
            cell(&self.deformation, 2),
            cell(&self.momenta, 2),
            cell(&self.loglik, 1),
        ]
    }
}

/// One row per `(I, T)`, ascending.
pub fn table1(runs: &[((usize, usize), MetricsDoc)]) -> Vec<Table1Row> {
    let mut groups: BTreeMap<(usize, usize), Vec<&MetricsDoc>> = BTreeMap::new();
    for (key, m) in runs {
        groups.entry(*key).or_default().push(m);
    }
    groups
        .into_iter()
        .map(|((i, t), ms)| {
            let col = |f: fn(&MetricsDoc) -> Option<f64>| Spread::of(ms.iter().filter_map(|m| f(m)));
            Table1Row {
                num_sources: i,
                num_times: t,
                runs: ms.len(),
                corr: col(|m| m.corr),
                fluorescence: col(|m| m.fluor_abs_err),
                template: col(|m| m.template_err),
                deformation: col(|m| m.deform_err),
                momenta: col(|m| m.momenta_err),
                loglik: col(|m| m.per_voxel_loglik),
            }
        })
        .collect()
}

/// Tab-separated table with a header line.
pub fn format_table1(rows: &[Table1Row]) -> String {
    let mut out = TABLE1_HEADER.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.cells().join("\t"));
        out.push('\n');
    }
    out
}
