//! Scheme selection: build every plan for a matrix, execute it once on the
//! cluster, and pick the lowest modeled exchange time.

use serde::Serialize;

use crate::cluster::{spmbv, DistBlockVector, DistMatrix, Executor};
use crate::error::{Error, Result};
use crate::linalg::BlockVector;
use crate::models::{scheme_time, MachineParams};
use crate::schemes::{plan_stats, CommStats, Scheme};

#[derive(Debug, Clone, Serialize)]
pub struct TuneEntry {
    pub scheme: Scheme,
    pub stats: CommStats,
    pub modeled_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TuneReport {
    pub t: usize,
    pub selected: Scheme,
    pub entries: Vec<TuneEntry>,
}

/// Deterministic probe block used to exercise each plan.
pub fn probe_block(n: usize, t: usize) -> BlockVector {
    let data = (0..n * t).map(|k| 1.0 + (k % 97) as f64 / 97.0).collect();
    BlockVector::from_column_major(n, t, data).expect("sizes agree")
}

/// Evaluates all schemes at block width `t`. Ties go to the earlier scheme in
/// [`Scheme::ALL`], so standard wins whenever nothing is gained.
pub fn tune_scheme(
    matrix: &DistMatrix,
    t: usize,
    threshold: usize,
    params: &MachineParams,
    exec: &Executor,
) -> Result<TuneReport> {
    let params = params.with_ppn(matrix.topology().ppn());
    let probe = DistBlockVector::scatter(&probe_block(matrix.n_rows(), t), matrix.partition())?;
    let mut entries = Vec::with_capacity(Scheme::ALL.len());
    let mut reference: Option<DistBlockVector> = None;
    for scheme in Scheme::ALL {
        let plan = matrix.plan(scheme, t, params.f, threshold)?;
        let (w, trace) = spmbv(matrix, &probe, &plan, exec)?;
        let stats = plan_stats(&plan);
        if trace.comm_stats() != stats {
            return Err(Error::InvalidArgument(format!(
                "{scheme} trace disagrees with its plan"
            )));
        }
        match &reference {
            Some(r) if r != &w => {
                return Err(Error::InvalidArgument(format!(
                    "{scheme} product differs from the standard product"
                )))
            }
            Some(_) => {}
            None => reference = Some(w),
        }
        entries.push(TuneEntry {
            scheme,
            stats,
            modeled_seconds: scheme_time(scheme, &stats, t, &params),
        });
    }
    let mut selected = &entries[0];
    for e in &entries[1..] {
        if e.modeled_seconds < selected.modeled_seconds {
            selected = e;
        }
    }
    Ok(TuneReport {
        t,
        selected: selected.scheme,
        entries,
    })
}
