//! Versioned JSON artifacts passed between `identify` and `detect`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use rrg_core::numerics::Matrix;
use rrg_core::sysid::{GramInverse, Identification, MarkovEstimate};

use crate::failure::{io_error, Failure};

pub const SCHEMA_VERSION: u32 = 1;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Serialize, Deserialize)]
pub struct MarkovBlocks {
    pub d: Rows,
    /// `CΦ^j B̃` for `j = 0..p-1`.
    pub b: Vec<Rows>,
    /// `CΦ^j K` for `j = 0..p-1`.
    pub k: Vec<Rows>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MarkovFile {
    pub schema_version: u32,
    pub p: usize,
    pub m: usize,
    pub l: usize,
    pub xi_hat: Rows,
    pub blocks: MarkovBlocks,
    pub sigma_e_hat: Rows,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GramFile {
    pub schema_version: u32,
    pub dim: usize,
    pub g: Rows,
}

impl MarkovFile {
    pub fn from_identification(id: &Identification) -> Self {
        let mk = &id.markov;
        let p = mk.past_horizon();
        Self {
            schema_version: SCHEMA_VERSION,
            p,
            m: mk.input_dim(),
            l: mk.output_dim(),
            xi_hat: mk.xi_hat().to_rows(),
            blocks: MarkovBlocks {
                d: mk.d().to_rows(),
                b: (0..p).map(|j| mk.b_block(j).to_rows()).collect(),
                k: (0..p).map(|j| mk.k_block(j).to_rows()).collect(),
            },
            sigma_e_hat: id.sigma_e_hat.to_rows(),
        }
    }

    pub fn markov(&self) -> Result<MarkovEstimate, Failure> {
        let xi = matrix(&self.xi_hat, "xi_hat")?;
        Ok(MarkovEstimate::new(xi, self.p, self.m, self.l)?)
    }

    pub fn sigma_e_hat(&self) -> Result<Matrix, Failure> {
        matrix(&self.sigma_e_hat, "sigma_e_hat")
    }
}

impl GramFile {
    pub fn from_gram(g: &GramInverse) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dim: g.dim(),
            g: g.matrix().to_rows(),
        }
    }

    pub fn gram(&self) -> Result<GramInverse, Failure> {
        let g = matrix(&self.g, "g")?;
        if g.rows() != self.dim {
            return Err(Failure::data(format!(
                "gram.json declares dim {} but holds {} rows",
                self.dim,
                g.rows()
            )));
        }
        Ok(GramInverse::from_matrix(g)?)
    }
}

pub fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, Failure> {
    if rows.is_empty() {
        return Err(Failure::data(format!("{what} is empty")));
    }
    Matrix::from_rows(rows).map_err(|e| Failure::data(format!("{what}: {e}")))
}

/// Reads a JSON artifact, rejecting unknown schema versions.
pub fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let file = File::open(path).map_err(|e| io_error(path, "open", e))?;
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        other => {
            return Err(Failure::data(format!(
                "{}: unsupported schema_version {other:?}",
                path.display()
            )))
        }
    }
    serde_json::from_value(value).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| io_error(path, "create", e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| io_error(path, "write", e))
}
