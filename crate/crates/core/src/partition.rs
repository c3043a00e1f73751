//! Row partitioning over virtual ranks, rank-to-node placement, and the
//! communication pattern a distributed SpMBV induces.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// `p` ranks placed on nodes in contiguous blocks of `ppn`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    p: usize,
    ppn: usize,
}

impl Topology {
    pub fn new(p: usize, ppn: usize) -> Result<Self> {
        if p == 0 || ppn == 0 {
            return Err(Error::InvalidArgument(format!(
                "topology needs p >= 1 and ppn >= 1 (got p = {p}, ppn = {ppn})"
            )));
        }
        Ok(Self { p, ppn })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn ppn(&self) -> usize {
        self.ppn
    }

    pub fn n_nodes(&self) -> usize {
        self.p.div_ceil(self.ppn)
    }

    #[inline]
    pub fn node_of(&self, rank: usize) -> usize {
        rank / self.ppn
    }

    #[inline]
    pub fn local_index(&self, rank: usize) -> usize {
        rank % self.ppn
    }

    pub fn node_ranks(&self, node: usize) -> Range<usize> {
        let lo = node * self.ppn;
        lo..(lo + self.ppn).min(self.p)
    }

    /// Number of ranks on `node`; only the last node can be short.
    pub fn node_size(&self, node: usize) -> usize {
        self.node_ranks(node).len()
    }

    /// The rank holding `local` on `node`, wrapping on a short last node.
    pub fn rank_at(&self, node: usize, local: usize) -> usize {
        let ranks = self.node_ranks(node);
        ranks.start + local % ranks.len()
    }

    pub fn same_node(&self, a: usize, b: usize) -> bool {
        self.node_of(a) == self.node_of(b)
    }

    pub fn locality(&self, src: usize, dst: usize) -> Locality {
        if src == dst {
            Locality::OnProcess
        } else if self.same_node(src, dst) {
            Locality::OnNode
        } else {
            Locality::OffNode
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Locality {
    OnProcess,
    OnNode,
    OffNode,
}

/// How rows are assigned to ranks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionStrategy {
    #[default]
    EqualRows,
    EqualNonzeros,
}

/// Contiguous row ranges; rank `r` owns `offsets[r]..offsets[r + 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowPartition {
    offsets: Vec<usize>,
}

impl RowPartition {
    pub fn from_offsets(offsets: Vec<usize>) -> Result<Self> {
        if offsets.len() < 2 || offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(
                "partition offsets must start at 0 and be non-decreasing".into(),
            ));
        }
        Ok(Self { offsets })
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn n_ranks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        self.offsets[self.offsets.len() - 1]
    }

    pub fn range(&self, rank: usize) -> Range<usize> {
        self.offsets[rank]..self.offsets[rank + 1]
    }

    pub fn n_local(&self, rank: usize) -> usize {
        self.offsets[rank + 1] - self.offsets[rank]
    }

    /// Rank owning `row`.
    pub fn owner(&self, row: usize) -> usize {
        debug_assert!(row < self.n_rows());
        self.offsets.partition_point(|&o| o <= row) - 1
    }
}

/// Balanced contiguous partition: the first `n mod p` ranks get one extra row.
pub fn build_row_partition(n: usize, p: usize) -> Result<RowPartition> {
    if p == 0 || p > n {
        return Err(Error::InvalidArgument(format!(
            "cannot partition {n} rows over {p} ranks"
        )));
    }
    let (base, extra) = (n / p, n % p);
    let mut offsets = Vec::with_capacity(p + 1);
    offsets.push(0);
    for rank in 0..p {
        let rows = base + usize::from(rank < extra);
        offsets.push(offsets[rank] + rows);
    }
    RowPartition::from_offsets(offsets)
}

/// Contiguous partition with roughly `nnz / p` nonzeros per rank, at least one row each.
pub fn build_nnz_partition(a: &CsrMatrix, p: usize) -> Result<RowPartition> {
    let n = a.n_rows();
    if p == 0 || p > n {
        return Err(Error::InvalidArgument(format!(
            "cannot partition {n} rows over {p} ranks"
        )));
    }
    let row_offsets = a.row_offsets();
    let nnz = a.nnz() as f64;
    let mut offsets = vec![0usize];
    for rank in 1..p {
        let target = nnz * rank as f64 / p as f64;
        // first row boundary whose prefix nnz reaches the target
        let mut cut = row_offsets.partition_point(|&o| (o as f64) < target);
        let lo = offsets[rank - 1] + 1;
        let hi = n - (p - rank);
        cut = cut.clamp(lo, hi);
        offsets.push(cut);
    }
    offsets.push(n);
    RowPartition::from_offsets(offsets)
}

pub fn build_partition(
    a: &CsrMatrix,
    p: usize,
    strategy: PartitionStrategy,
) -> Result<RowPartition> {
    match strategy {
        PartitionStrategy::EqualRows => build_row_partition(a.n_rows(), p),
        PartitionStrategy::EqualNonzeros => build_nnz_partition(a, p),
    }
}

/// Rows one rank must receive from one source rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub source: usize,
    /// Sorted global row indices.
    pub rows: Vec<usize>,
    pub locality: Locality,
}

/// Who needs which remote rows for `A V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommPattern {
    topology: Topology,
    partition: RowPartition,
    /// Per destination rank, requirements sorted by source rank.
    recvs: Vec<Vec<Requirement>>,
}

impl CommPattern {
    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn partition(&self) -> &RowPartition {
        &self.partition
    }

    pub fn n_ranks(&self) -> usize {
        self.recvs.len()
    }

    pub fn recvs(&self, rank: usize) -> &[Requirement] {
        &self.recvs[rank]
    }

    /// Send lists of `rank`: `(destination, rows, locality)` sorted by destination.
    pub fn sends(&self, rank: usize) -> Vec<(usize, &[usize], Locality)> {
        let mut out = Vec::new();
        for (dst, reqs) in self.recvs.iter().enumerate() {
            if let Ok(k) = reqs.binary_search_by_key(&rank, |r| r.source) {
                out.push((dst, reqs[k].rows.as_slice(), reqs[k].locality));
            }
        }
        out
    }

    /// Every remote row `rank` needs, ascending.
    pub fn required_rows(&self, rank: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = self.recvs[rank]
            .iter()
            .flat_map(|r| r.rows.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }

    /// All `(destination, row)` requirements.
    pub fn requirement_set(&self) -> BTreeSet<(usize, usize)> {
        self.recvs
            .iter()
            .enumerate()
            .flat_map(|(dst, reqs)| {
                reqs.iter()
                    .flat_map(move |r| r.rows.iter().map(move |&row| (dst, row)))
            })
            .collect()
    }

    pub fn total_required(&self) -> usize {
        self.recvs
            .iter()
            .flat_map(|reqs| reqs.iter().map(|r| r.rows.len()))
            .sum()
    }

    /// Same index sets under a different rank placement; only locality tags change.
    pub fn with_topology(&self, topology: Topology) -> Result<Self> {
        if topology.p() != self.topology.p() {
            return Err(Error::DimensionMismatch {
                context: "CommPattern::with_topology",
                expected: self.topology.p(),
                got: topology.p(),
            });
        }
        let mut out = self.clone();
        out.topology = topology;
        for (dst, reqs) in out.recvs.iter_mut().enumerate() {
            for r in reqs {
                r.locality = topology.locality(r.source, dst);
            }
        }
        Ok(out)
    }
}

fn check_layout(a: &CsrMatrix, part: &RowPartition, topo: Option<Topology>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.n_rows(),
            cols: a.n_cols(),
        });
    }
    if part.n_rows() != a.n_rows() {
        return Err(Error::DimensionMismatch {
            context: "partition rows",
            expected: a.n_rows(),
            got: part.n_rows(),
        });
    }
    if let Some(topo) = topo {
        if topo.p() != part.n_ranks() {
            return Err(Error::DimensionMismatch {
                context: "topology ranks",
                expected: part.n_ranks(),
                got: topo.p(),
            });
        }
    }
    Ok(())
}

/// Extracts the remote-row requirements of every rank.
pub fn analyze_comm(a: &CsrMatrix, part: &RowPartition, topo: Topology) -> Result<CommPattern> {
    check_layout(a, part, Some(topo))?;
    let recvs = (0..part.n_ranks())
        .map(|rank| {
            let owned = part.range(rank);
            let remote: BTreeSet<usize> = owned
                .clone()
                .flat_map(|row| a.row(row).0.iter().copied())
                .filter(|c| !owned.contains(c))
                .collect();
            let mut reqs: Vec<Requirement> = Vec::new();
            for col in remote {
                let source = part.owner(col);
                match reqs.last_mut() {
                    Some(last) if last.source == source => last.rows.push(col),
                    _ => reqs.push(Requirement {
                        source,
                        rows: vec![col],
                        locality: topo.locality(source, rank),
                    }),
                }
            }
            reqs
        })
        .collect();
    Ok(CommPattern {
        topology: topo,
        partition: part.clone(),
        recvs,
    })
}

/// One rank's rows split into the on-process diagonal block and the
/// off-process block over received rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBlocks {
    pub rank: usize,
    pub rows: Range<usize>,
    /// Columns renumbered relative to the rank's first row.
    pub on_process: CsrMatrix,
    /// Columns index into `remote_columns`, i.e. the ascending receive buffer.
    pub off_process: CsrMatrix,
    /// Global row index of each off-process column, ascending.
    pub remote_columns: Vec<usize>,
}

impl LocalBlocks {
    pub fn nnz(&self) -> usize {
        self.on_process.nnz() + self.off_process.nnz()
    }

    /// Undoes the renumbering, returning `(global row, global col, value)` triplets.
    pub fn global_entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for local in 0..self.rows.len() {
            let row = self.rows.start + local;
            let (cols, vals) = self.on_process.row(local);
            out.extend(cols.iter().zip(vals).map(|(&c, &v)| (row, self.rows.start + c, v)));
            let (cols, vals) = self.off_process.row(local);
            out.extend(
                cols.iter()
                    .zip(vals)
                    .map(|(&c, &v)| (row, self.remote_columns[c], v)),
            );
        }
        out.sort_by_key(|&(r, c, _)| (r, c));
        out
    }
}

pub fn split_local_blocks(a: &CsrMatrix, part: &RowPartition, rank: usize) -> Result<LocalBlocks> {
    check_layout(a, part, None)?;
    if rank >= part.n_ranks() {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} out of range for {} ranks",
            part.n_ranks()
        )));
    }
    let rows = part.range(rank);
    let remote_columns: Vec<usize> = rows
        .clone()
        .flat_map(|row| a.row(row).0.iter().copied())
        .filter(|c| !rows.contains(c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut on = Vec::new();
    let mut off = Vec::new();
    for (local, row) in rows.clone().enumerate() {
        let (cols, vals) = a.row(row);
        for (&c, &v) in cols.iter().zip(vals) {
            if rows.contains(&c) {
                on.push((local, c - rows.start, v));
            } else {
                let k = remote_columns
                    .binary_search(&c)
                    .expect("remote column collected above");
                off.push((local, k, v));
            }
        }
    }
    let n_local = rows.len();
    Ok(LocalBlocks {
        rank,
        on_process: CsrMatrix::from_triplets(n_local, n_local, on)?,
        off_process: CsrMatrix::from_triplets(n_local, remote_columns.len(), off)?,
        remote_columns,
        rows,
    })
}
