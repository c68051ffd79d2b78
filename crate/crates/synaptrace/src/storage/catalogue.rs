//! Catalogue JSON documents.
//!
//! ```json
//! {"dim":2,"I":1,"T":2,
//!  "positions":[[x,y]], "fluorescence":[[f0,f1]], "momenta":[[[px,py],[px,py]]],
//!  "background":b, "config":{...}}
//! ```
//!
//! Nested arrays are indexed source, then time, then axis. Floats are
//! written with 17 significant digits.

use std::path::Path;

use serde::{Deserialize, Serialize};
use synaptrace_core::{Catalogue, ModelConfig, SpdMatrix};

use super::{read_json, write_json};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfigDoc {
    pub dim: usize,
    pub grid_shape: Vec<usize>,
    pub num_sources: usize,
    pub num_times: usize,
    /// `dim × dim`, symmetric positive definite.
    pub psf_cov: Vec<Vec<f64>>,
    pub motion_cov: Vec<Vec<f64>>,
    pub fluor_scale: f64,
    pub background_scale: f64,
    pub kernel_bandwidth: f64,
}

fn nest(m: &SpdMatrix) -> Vec<Vec<f64>> {
    m.to_row_major().chunks(m.dim()).map(<[f64]>::to_vec).collect()
}

fn unnest(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<SpdMatrix> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Schema(format!("{what} must be {dim}x{dim}")));
    }
    let flat: Vec<f64> = rows.concat();
    Ok(SpdMatrix::new(dim, &flat)?)
}

impl From<&ModelConfig> for ModelConfigDoc {
    fn from(c: &ModelConfig) -> Self {
        Self {
            dim: c.dim,
            grid_shape: c.grid_shape.clone(),
            num_sources: c.num_sources,
            num_times: c.num_times,
            psf_cov: nest(&c.psf_cov),
            motion_cov: nest(&c.motion_cov),
            fluor_scale: c.fluor_scale,
            background_scale: c.background_scale,
            kernel_bandwidth: c.kernel_bandwidth,
        }
    }
}

impl ModelConfigDoc {
    pub fn to_config(&self) -> Result<ModelConfig> {
        if !(2..=3).contains(&self.dim) {
            return Err(Error::Model(synaptrace_core::Error::InvalidConfig("dim must be 2 or 3")));
        }
        let config = ModelConfig {
            dim: self.dim,
            grid_shape: self.grid_shape.clone(),
            num_sources: self.num_sources,
            num_times: self.num_times,
            psf_cov: unnest(&self.psf_cov, self.dim, "psf_cov")?,
            motion_cov: unnest(&self.motion_cov, self.dim, "motion_cov")?,
            fluor_scale: self.fluor_scale,
            background_scale: self.background_scale,
            kernel_bandwidth: self.kernel_bandwidth,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogueDoc {
    pub dim: usize,
    #[serde(rename = "I")]
    pub num_sources: usize,
    #[serde(rename = "T")]
    pub num_times: usize,
    pub positions: Vec<Vec<f64>>,
    pub fluorescence: Vec<Vec<f64>>,
    pub momenta: Vec<Vec<Vec<f64>>>,
    pub background: f64,
    pub config: ModelConfigDoc,
}

impl CatalogueDoc {
    pub fn new(catalogue: &Catalogue, config: &ModelConfig) -> Self {
        let (d, t) = (catalogue.dim, catalogue.num_times);
        Self {
            dim: d,
            num_sources: catalogue.num_sources,
            num_times: t,
            positions: catalogue.positions.chunks(d).map(<[f64]>::to_vec).collect(),
            fluorescence: catalogue.fluorescence.chunks(t).map(<[f64]>::to_vec).collect(),
            momenta: catalogue
                .momenta
                .chunks(t * d)
                .map(|src| src.chunks(d).map(<[f64]>::to_vec).collect())
                .collect(),
            background: catalogue.background,
            config: config.into(),
        }
    }

    /// Rebuilds and validates the catalogue and its configuration.
    pub fn into_parts(self) -> Result<(Catalogue, ModelConfig)> {
        let (i, t, d) = (self.num_sources, self.num_times, self.dim);
        let shape_err = |what: &str, want: String| Error::Schema(format!("{what} must be {want}"));
        if self.positions.len() != i || self.positions.iter().any(|p| p.len() != d) {
            return Err(shape_err("positions", format!("{i}x{d}")));
        }
        if self.fluorescence.len() != i || self.fluorescence.iter().any(|f| f.len() != t) {
            return Err(shape_err("fluorescence", format!("{i}x{t}")));
        }
        if self.momenta.len() != i || self.momenta.iter().any(|m| m.len() != t || m.iter().any(|p| p.len() != d)) {
            return Err(shape_err("momenta", format!("{i}x{t}x{d}")));
        }
        let config = self.config.to_config()?;
        let catalogue = Catalogue {
            dim: d,
            num_sources: i,
            num_times: t,
            positions: self.positions.concat(),
            fluorescence: self.fluorescence.concat(),
            momenta: self.momenta.into_iter().flatten().flatten().collect(),
            background: self.background,
        };
        catalogue.validate(&config)?;
        Ok((catalogue, config))
    }
}

pub fn write_catalogue(path: &Path, catalogue: &Catalogue, config: &ModelConfig) -> Result<()> {
    catalogue.validate(config)?;
    write_json(path, &CatalogueDoc::new(catalogue, config))
}

pub fn read_catalogue(path: &Path) -> Result<(Catalogue, ModelConfig)> {
    read_json::<CatalogueDoc>(path)?.into_parts()
}
