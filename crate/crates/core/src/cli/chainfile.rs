//! Chain files: CSV with one row per stored iteration and a JSON sidecar
//! `<stem>.meta.json`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::SampleMatrix;
use crate::error::{Error, Result};

pub const FORMAT: &str = "glmm-chain/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub format: String,
    pub config_hash: String,
    pub dataset_sha256: String,
    pub sampler: String,
    pub seed: u64,
    /// Index of the chain's random stream under `seed`.
    pub chain: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub rows: usize,
    pub acceptance_rate: Option<f64>,
    pub step_size: Option<f64>,
}

/// `run.csv` → `run.meta.json`
pub fn meta_path(chain_path: &Path) -> PathBuf {
    chain_path.with_extension("meta.json")
}

pub fn write_chain(path: &Path, samples: &SampleMatrix, meta: &ChainMeta) -> Result<()> {
    let io = |e: csv::Error| Error::Config(format!("cannot write '{}': {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(&samples.names).map_err(io)?;
    for r in 0..samples.data.nrows() {
        w.write_record(samples.data.row(r).iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Config(format!("cannot write '{}': {e}", path.display())))?;
    let mp = meta_path(path);
    let text = serde_json::to_string_pretty(meta).expect("metadata serializes") + "\n";
    std::fs::write(&mp, text).map_err(|e| Error::Config(format!("cannot write '{}': {e}", mp.display())))
}

/// Reads the draws and, when present, the sidecar.
pub fn read_chain(path: &Path) -> Result<(Vec<String>, DMatrix<f64>, Option<ChainMeta>)> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("cannot open chain '{}': {e}", path.display())))?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Config(format!("chain '{}': {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Config(format!("chain '{}': {e}", path.display())))?;
        for v in rec.iter() {
            values.push(
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("chain '{}': bad value '{v}'", path.display())))?,
            );
        }
        rows += 1;
    }
    let data = DMatrix::from_row_slice(rows, names.len(), &values);
    let mp = meta_path(path);
    let meta = if mp.exists() {
        let text = std::fs::read_to_string(&mp)
            .map_err(|e| Error::Config(format!("cannot read '{}': {e}", mp.display())))?;
        let meta: ChainMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("metadata '{}': {e}", mp.display())))?;
        if meta.rows != rows {
            return Err(Error::Config(format!(
                "chain '{}' has {rows} rows but its metadata records {}",
                path.display(),
                meta.rows
            )));
        }
        Some(meta)
    } else {
        None
    };
    Ok((names, data, meta))
}
