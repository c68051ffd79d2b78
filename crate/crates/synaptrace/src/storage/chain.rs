//! Chain directories.
//!
//! ```text
//! chain/
//!   positions.psvt     f64 [n, I, dim]
//!   fluorescence.psvt  f64 [n, I, T]
//!   momenta.psvt       f64 [n, I, T, dim]
//!   background.psvt    f64 [n]
//!   index.json         sampler statistics, initial state, block list
//! ```
//!
//! Source blocks are omitted when `I = 0`. `index.json` is written last, so
//! a directory without it is an interrupted write.

use std::path::Path;

use serde::{Deserialize, Serialize};
use synaptrace_core::{Catalogue, Chain};

use super::tensor::{read_tensor, write_tensor, Tensor};
use super::{read_json, write_json};
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateDoc {
    positions: Vec<f64>,
    fluorescence: Vec<f64>,
    momenta: Vec<f64>,
    background: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainIndex {
    num_draws: usize,
    dim: usize,
    #[serde(rename = "I")]
    num_sources: usize,
    #[serde(rename = "T")]
    num_times: usize,
    seed: u64,
    leapfrog_steps: usize,
    divergences: usize,
    energies: Vec<f64>,
    accept_flags: Vec<bool>,
    accept_probs: Vec<f64>,
    step_size_trace: Vec<f64>,
    mass_diag: Vec<f64>,
    warmup_accept_probs: Vec<f64>,
    initial: StateDoc,
    blocks: Vec<String>,
}

const BLOCKS: [&str; 4] = ["positions", "fluorescence", "momenta", "background"];

fn block_file(name: &str) -> String {
    format!("{name}.psvt")
}

fn same_shape(a: &Catalogue, b: &Catalogue) -> bool {
    a.dim == b.dim
        && a.num_sources == b.num_sources
        && a.num_times == b.num_times
        && a.positions.len() == b.positions.len()
        && a.fluorescence.len() == b.fluorescence.len()
        && a.momenta.len() == b.momenta.len()
}

pub fn write_chain(dir: &Path, chain: &Chain) -> Result<()> {
    let first = chain.draws.first().ok_or(synaptrace_core::Error::EmptyChain)?;
    if !chain.draws.iter().all(|d| same_shape(d, first)) || !same_shape(&chain.initial, first) {
        return Err(Error::Schema("chain draws have inconsistent shapes".into()));
    }
    let n = chain.draws.len();
    for (what, len) in [
        ("energies", chain.energies.len()),
        ("accept_flags", chain.accept_flags.len()),
        ("accept_probs", chain.accept_probs.len()),
    ] {
        if len != n {
            return Err(Error::Schema(format!("{what} has {len} entries for {n} draws")));
        }
    }
    let (i, t, d) = (first.num_sources, first.num_times, first.dim);
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // a stale index must not vouch for half-written blocks
    match std::fs::remove_file(dir.join(INDEX_FILE)) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(Error::io(dir.join(INDEX_FILE), e)),
        _ => {}
    }

    let mut blocks = Vec::new();
    let mut put = |name: &str, shape: Vec<usize>, values: Vec<f64>| -> Result<()> {
        write_tensor(&dir.join(block_file(name)), &Tensor::from_f64(shape, values)?)?;
        blocks.push(name.to_string());
        Ok(())
    };
    if i > 0 {
        put("positions", vec![n, i, d], chain.draws.iter().flat_map(|c| c.positions.iter().copied()).collect())?;
        put("fluorescence", vec![n, i, t], chain.draws.iter().flat_map(|c| c.fluorescence.iter().copied()).collect())?;
        put("momenta", vec![n, i, t, d], chain.draws.iter().flat_map(|c| c.momenta.iter().copied()).collect())?;
    }
    put("background", vec![n], chain.draws.iter().map(|c| c.background).collect())?;

    let index = ChainIndex {
        num_draws: n,
        dim: d,
        num_sources: i,
        num_times: t,
        seed: chain.seed,
        leapfrog_steps: chain.leapfrog_steps,
        divergences: chain.divergences,
        energies: chain.energies.clone(),
        accept_flags: chain.accept_flags.clone(),
        accept_probs: chain.accept_probs.clone(),
        step_size_trace: chain.step_size_trace.clone(),
        mass_diag: chain.mass_diag.clone(),
        warmup_accept_probs: chain.warmup_accept_probs.clone(),
        initial: StateDoc {
            positions: chain.initial.positions.clone(),
            fluorescence: chain.initial.fluorescence.clone(),
            momenta: chain.initial.momenta.clone(),
            background: chain.initial.background,
        },
        blocks,
    };
    write_json(&dir.join(INDEX_FILE), &index)
}

pub fn read_chain(dir: &Path) -> Result<Chain> {
    let index_path = dir.join(INDEX_FILE);
    if !index_path.is_file() {
        return Err(Error::IncompleteChain { path: dir.to_path_buf(), missing: INDEX_FILE.into() });
    }
    let index: ChainIndex = read_json(&index_path)?;
    let (n, i, t, d) = (index.num_draws, index.num_sources, index.num_times, index.dim);
    if n == 0 {
        return Err(synaptrace_core::Error::EmptyChain.into());
    }
    if !(2..=3).contains(&d) || [n, i, t, d].iter().try_fold(1usize, |a, &b| a.checked_mul(b)).is_none() {
        return Err(Error::Schema(format!("implausible chain dimensions n={n} I={i} T={t} dim={d}")));
    }
    let expected: Vec<&str> = if i > 0 { BLOCKS.to_vec() } else { vec!["background"] };
    if index.blocks != expected {
        return Err(Error::Schema(format!("chain blocks {:?}, expected {:?}", index.blocks, expected)));
    }
    for (what, len) in [
        ("energies", index.energies.len()),
        ("accept_flags", index.accept_flags.len()),
        ("accept_probs", index.accept_probs.len()),
    ] {
        if len != n {
            return Err(Error::Schema(format!("{what} has {len} entries for {n} draws")));
        }
    }
    let init = &index.initial;
    if init.positions.len() != i * d || init.fluorescence.len() != i * t || init.momenta.len() != i * t * d {
        return Err(Error::Schema("initial state shape".into()));
    }

    let load = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let path = dir.join(block_file(name));
        if !path.is_file() {
            return Err(Error::IncompleteChain { path: dir.to_path_buf(), missing: block_file(name) });
        }
        read_tensor(&path)?.into_f64(shape)
    };
    let background = load("background", &[n])?;
    let (positions, fluorescence, momenta) = if i > 0 {
        (load("positions", &[n, i, d])?, load("fluorescence", &[n, i, t])?, load("momenta", &[n, i, t, d])?)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };

    let draws = (0..n)
        .map(|k| Catalogue {
            dim: d,
            num_sources: i,
            num_times: t,
            positions: positions[k * i * d..(k + 1) * i * d].to_vec(),
            fluorescence: fluorescence[k * i * t..(k + 1) * i * t].to_vec(),
            momenta: momenta[k * i * t * d..(k + 1) * i * t * d].to_vec(),
            background: background[k],
        })
        .collect();
    Ok(Chain {
        draws,
        energies: index.energies,
        accept_flags: index.accept_flags,
        accept_probs: index.accept_probs,
        step_size_trace: index.step_size_trace,
        mass_diag: index.mass_diag,
        seed: index.seed,
        initial: Catalogue {
            dim: d,
            num_sources: i,
            num_times: t,
            positions: index.initial.positions,
            fluorescence: index.initial.fluorescence,
            momenta: index.initial.momenta,
            background: index.initial.background,
        },
        leapfrog_steps: index.leapfrog_steps,
        divergences: index.divergences,
        warmup_accept_probs: index.warmup_accept_probs,
    })
}
