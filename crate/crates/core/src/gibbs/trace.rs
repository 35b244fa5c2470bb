//! Thinned post-burn-in snapshots of the chain and their on-disk formats:
//! newline-delimited JSON (header line, then one snapshot per line) plus a
//! per-sweep diagnostics CSV.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::components::{BasePrior, RegressionComponent};
use crate::error::{Error, Result};
use crate::multiindex::FactorConfig;
use crate::prior::Hyperparams;

use super::{SamplerConfig, SamplerState};

/// Everything needed to interpret snapshots without the original run context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub cfg: FactorConfig,
    pub hyper: Hyperparams,
    pub base: BasePrior,
    pub per_basis_base: Option<Vec<BasePrior>>,
    pub dim: usize,
    pub n_samples: usize,
    pub sampler: SamplerConfig,
}

impl TraceHeader {
    pub fn base_for(&self, basis: usize) -> &BasePrior {
        match &self.per_basis_base {
            Some(bases) => &bases[basis],
            None => &self.base,
        }
    }
}

/// One cluster's parameters, matrices flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSnapshot {
    pub mu_x: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma_y2: f64,
}

impl PhiSnapshot {
    pub fn from_component(phi: &RegressionComponent) -> Self {
        Self {
            mu_x: phi.mu_x().as_slice().to_vec(),
            sigma_x: phi.sigma_x().transpose().as_slice().to_vec(),
            beta: phi.beta().as_slice().to_vec(),
            sigma_y2: phi.sigma_y2(),
        }
    }

    pub fn to_component(&self) -> Result<RegressionComponent> {
        let p = self.mu_x.len();
        RegressionComponent::new(
            DVector::from_column_slice(&self.mu_x),
            DMatrix::from_row_slice(p, p, &self.sigma_x),
            DVector::from_column_slice(&self.beta),
            self.sigma_y2,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSnapshot {
    pub size: usize,
    pub phi: PhiSnapshot,
}

/// One recorded state: assignments as flat arrays, latent factors, and the
/// live clusters of every basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub sweep: usize,
    pub log_joint: f64,
    pub basis: Vec<usize>,
    pub cluster: Vec<usize>,
    pub u: Vec<Vec<Vec<f64>>>,
    pub sigma_u: Vec<f64>,
    pub clusters: Vec<Vec<ClusterSnapshot>>,
}

impl Snapshot {
    pub fn from_state(sweep: usize, log_joint: f64, state: &SamplerState) -> Self {
        Self {
            sweep,
            log_joint,
            basis: state.assignments.iter().map(|a| a.basis).collect(),
            cluster: state.assignments.iter().map(|a| a.cluster).collect(),
            u: state.latents.raw().clone(),
            sigma_u: state.latents.sigmas().to_vec(),
            clusters: state
                .registry
                .per_basis
                .iter()
                .map(|clusters| {
                    clusters
                        .iter()
                        .map(|c| ClusterSnapshot {
                            size: c.size(),
                            phi: PhiSnapshot::from_component(c.phi()),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn n_live_clusters(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// The sample's cluster label as a single id, stable within a snapshot.
    pub fn flat_label(&self, sample: usize) -> (usize, usize) {
        (self.basis[sample], self.cluster[sample])
    }
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStat {
    pub sweep: usize,
    pub log_joint: f64,
    pub n_live_clusters: usize,
}

/// A full recorded chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub snapshots: Vec<Snapshot>,
    pub sweep_stats: Vec<SweepStat>,
}

impl Trace {
    /// Write the header line followed by one JSON snapshot per line.
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_string(&self.header)
            .map_err(|e| Error::State(format!("header serialization failed: {e}")))?;
        writeln!(w, "{header}").map_err(|e| Error::Input(format!("write failed: {e}")))?;
        for snap in &self.snapshots {
            let line = serde_json::to_string(snap)
                .map_err(|e| Error::State(format!("snapshot serialization failed: {e}")))?;
            writeln!(w, "{line}").map_err(|e| Error::Input(format!("write failed: {e}")))?;
        }
        Ok(())
    }

    /// Read a trace written by [`Trace::write_ndjson`]. Sweep diagnostics
    /// live in the separate CSV and come back empty.
    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Trace> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Input("trace file is empty".into()))?
            .map_err(|e| Error::Input(format!("read failed: {e}")))?;
        let header: TraceHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::Input(format!("malformed trace header: {e}")))?;
        let mut snapshots = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Input(format!("read failed: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let snap: Snapshot = serde_json::from_str(&line)
                .map_err(|e| Error::Input(format!("malformed snapshot on line {}: {e}", i + 2)))?;
            snapshots.push(snap);
        }
        Ok(Trace {
            header,
            snapshots,
            sweep_stats: Vec::new(),
        })
    }

    /// Diagnostics CSV: `sweep,log_joint,n_live_clusters_total`.
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sweep,log_joint,n_live_clusters_total")
            .map_err(|e| Error::Input(format!("write failed: {e}")))?;
        for s in &self.sweep_stats {
            writeln!(w, "{},{},{}", s.sweep, s.log_joint, s.n_live_clusters)
                .map_err(|e| Error::Input(format!("write failed: {e}")))?;
        }
        Ok(())
    }
}
