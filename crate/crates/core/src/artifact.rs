//! JSON fit artifact: everything needed to rebuild a [`LatentFit`] for
//! prediction, plus the configuration it came from.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossbasis::DlnmBasis;
use crate::error::{Error, Result};
use crate::fit::LatentFit;
use crate::model::Layout;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub log_posterior: f64,
    pub newton_iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub hyper_converged: bool,
    pub hyper_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub config_hash: String,
    pub master_seed: u64,
    /// Echo of the run configuration.
    pub config: serde_json::Value,
    pub layout: Layout,
    pub basis: DlnmBasis,
    pub fixed_names: Vec<String>,
    pub unit_ids: Vec<String>,
    pub hyper_names: Vec<String>,
    /// Transformed hyperparameters at the optimum.
    pub hypers: Vec<f64>,
    pub natural_hypers: Vec<(String, f64)>,
    pub xi: Vec<f64>,
    /// Rows of the lower Cholesky factor of the posterior precision.
    pub precision_cholesky: Vec<Vec<f64>>,
    pub constraint: Option<Vec<Vec<f64>>>,
    pub diagnostics: Diagnostics,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nc = r.first().map_or(0, Vec::len);
    if r.iter().any(|row| row.len() != nc) {
        return Err(Error::Invalid(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(r.len(), nc, |i, j| r[i][j]))
}

impl FitArtifact {
    pub fn new(fit: &LatentFit, config: serde_json::Value, config_hash: String, master_seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash,
            master_seed,
            config,
            layout: fit.layout,
            basis: fit.basis.clone(),
            fixed_names: fit.fixed_names.clone(),
            unit_ids: fit.unit_ids.clone(),
            hyper_names: fit.hyper_names.clone(),
            hypers: fit.hypers.clone(),
            natural_hypers: fit.natural_hypers(),
            xi: fit.xi.iter().copied().collect(),
            precision_cholesky: rows(&fit.precision_chol),
            constraint: fit.constraint.as_ref().map(rows),
            diagnostics: Diagnostics {
                log_posterior: fit.logpost,
                newton_iterations: fit.newton_iters,
                grad_norm: fit.grad_norm,
                converged: fit.converged,
                hyper_converged: fit.hyper_converged,
                hyper_evaluations: fit.hyper_evals,
            },
        }
    }

    /// Rebuilds the fit; the optimiser trace is not stored.
    pub fn to_fit(&self) -> Result<LatentFit> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "fit artifact has schema version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let d = self.layout.dim();
        let chol = from_rows(&self.precision_cholesky, "precision_cholesky")?;
        if self.xi.len() != d || chol.nrows() != d || chol.ncols() != d {
            return Err(Error::Dimension(format!("artifact latent dimension does not match layout dimension {d}")));
        }
        let constraint = self.constraint.as_deref().map(|c| from_rows(c, "constraint")).transpose()?;
        if constraint.as_ref().is_some_and(|c| c.ncols() != d) {
            return Err(Error::Dimension("constraint width does not match the latent dimension".into()));
        }
        if self.hypers.len() != self.hyper_names.len() {
            return Err(Error::Dimension("hyperparameter names and values differ in length".into()));
        }
        Ok(LatentFit {
            xi: DVector::from_vec(self.xi.clone()),
            precision_chol: chol,
            constraint,
            layout: self.layout,
            basis: self.basis.clone(),
            fixed_names: self.fixed_names.clone(),
            unit_ids: self.unit_ids.clone(),
            hyper_names: self.hyper_names.clone(),
            hypers: self.hypers.clone(),
            logpost: self.diagnostics.log_posterior,
            newton_iters: self.diagnostics.newton_iterations,
            grad_norm: self.diagnostics.grad_norm,
            converged: self.diagnostics.converged,
            hyper_converged: self.diagnostics.hyper_converged,
            hyper_evals: self.diagnostics.hyper_evaluations,
            trace: Vec::new(),
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

/// Hex SHA-256 over the given parts, each length-prefixed so that part
/// boundaries matter.
pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}
