//! Columnar binary chain files.
//!
//! Layout: the 8-byte magic `BMIMCHN\0`, a little-endian `u32` format
//! version, a `u64` header length and a JSON header (grouping, kernel,
//! hyperparameters, sampler settings, acceptance logs, sizes), followed by
//! one column of `n_draws` little-endian `f64` values for each of: chain,
//! iteration, `λ⁻¹`, `σ²`, every `θ*_ml` in exposure order, every `δ_ml`
//! (0/1) and every `γ_j`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{validate_index_spec, IndexSpec};
use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, WeightSet};
use crate::likelihood::Hyperparameters;
use crate::sampler::{AcceptanceLog, Draw, ParamState, PosteriorChain, SamplerSettings};

pub const MAGIC: &[u8; 8] = b"BMIMCHN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    spec: IndexSpec,
    kernel: KernelConfig,
    hyper: Hyperparameters,
    settings: SamplerSettings,
    acceptance: Vec<AcceptanceLog>,
    n_draws: usize,
    p: usize,
    q: usize,
}

pub fn write_chain<W: Write>(chain: &PosteriorChain, w: W) -> Result<()> {
    let p = chain.spec.num_exposures();
    let q = chain.draws.first().map_or(0, |d| d.gamma.len());
    if chain.draws.iter().any(|d| d.gamma.len() != q) {
        return Err(Error::ChainFormat("draws disagree on the number of covariates".into()));
    }
    let header = Header {
        spec: chain.spec.clone(),
        kernel: chain.kernel,
        hyper: chain.hyper,
        settings: chain.settings.clone(),
        acceptance: chain.acceptance.clone(),
        n_draws: chain.draws.len(),
        p,
        q,
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(w);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;

    let mut column = |f: &dyn Fn(&Draw) -> f64| -> Result<()> {
        for d in &chain.draws {
            w.write_all(&f(d).to_le_bytes())?;
        }
        Ok(())
    };
    column(&|d| d.chain as f64)?;
    column(&|d| d.iteration as f64)?;
    column(&|d| d.state.lambda_inv)?;
    column(&|d| d.sigma2)?;
    for j in 0..p {
        column(&|d| d.state.weights.flat()[j])?;
    }
    for j in 0..p {
        column(&|d| f64::from(u8::from(d.state.included.concat()[j])))?;
    }
    for j in 0..q {
        column(&|d| d.gamma[j])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_chain<R: Read>(r: R) -> Result<PosteriorChain> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::ChainFormat("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::ChainFormat("not a chain file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::ChainFormat(format!("unsupported format version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| Error::ChainFormat("truncated header".into()))?;
    let h: Header = serde_json::from_slice(&json)?;
    validate_index_spec(&h.spec, h.p)?;

    let n = h.n_draws;
    let mut read_col = || -> Result<Vec<f64>> {
        let mut buf = vec![0u8; 8 * n];
        r.read_exact(&mut buf).map_err(|_| Error::ChainFormat("truncated data".into()))?;
        Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let chain_ids = read_col()?;
    let iterations = read_col()?;
    let lambdas = read_col()?;
    let sigmas = read_col()?;
    let thetas = (0..h.p).map(|_| read_col()).collect::<Result<Vec<_>>>()?;
    let deltas = (0..h.p).map(|_| read_col()).collect::<Result<Vec<_>>>()?;
    let gammas = (0..h.q).map(|_| read_col()).collect::<Result<Vec<_>>>()?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::ChainFormat("trailing bytes after data".into()));
    }

    let sizes = h.spec.sizes();
    let mut draws = Vec::with_capacity(n);
    for i in 0..n {
        let flat: Vec<f64> = thetas.iter().map(|c| c[i]).collect();
        let weights = WeightSet::from_flat(&flat, &h.spec)?;
        let mut included = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &s in &sizes {
            included.push(deltas[at..at + s].iter().map(|c| c[i] != 0.0).collect());
            at += s;
        }
        let state = ParamState::new(weights, included, lambdas[i])
            .map_err(|e| Error::ChainFormat(format!("draw {i}: {e}")))?;
        draws.push(Draw {
            chain: chain_ids[i] as usize,
            iteration: iterations[i] as usize,
            state,
            sigma2: sigmas[i],
            gamma: gammas.iter().map(|c| c[i]).collect(),
        });
    }
    Ok(PosteriorChain {
        spec: h.spec,
        kernel: h.kernel,
        hyper: h.hyper,
        settings: h.settings,
        draws,
        acceptance: h.acceptance,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidArgument(format!("bad path {path:?}")))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_chain(path: impl AsRef<Path>, chain: &PosteriorChain) -> Result<()> {
    let mut buf = Vec::new();
    write_chain(chain, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_chain(path: impl AsRef<Path>) -> Result<PosteriorChain> {
    read_chain(fs::File::open(path)?)
}

/// One row per draw: chain, iteration, λ⁻¹, σ², θ*, δ, γ.
pub fn write_chain_csv<W: Write>(chain: &PosteriorChain, exposure_names: &[String], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let q = chain.draws.first().map_or(0, |d| d.gamma.len());
    let mut header = vec!["chain".to_string(), "iteration".into(), "lambda_inv".into(), "sigma2".into()];
    header.extend(exposure_names.iter().map(|n| format!("theta_{n}")));
    header.extend(exposure_names.iter().map(|n| format!("delta_{n}")));
    header.extend((0..q).map(|j| format!("gamma_{j}")));
    out.write_record(&header)?;
    for d in &chain.draws {
        let mut row = vec![
            d.chain.to_string(),
            d.iteration.to_string(),
            d.state.lambda_inv.to_string(),
            d.sigma2.to_string(),
        ];
        row.extend(d.state.weights.flat().iter().map(|v| v.to_string()));
        row.extend(d.state.included.concat().iter().map(|&b| u8::from(b).to_string()));
        row.extend(d.gamma.iter().map(|v| v.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
