//! In-process virtual cluster: `p` ranks arranged in nodes of `ppn`, each
//! owning a contiguous block of rows. Plans are executed phase by phase with
//! every message packed from data its sender actually holds, and every
//! transfer is logged into an [`ExecutionTrace`].

use std::collections::BTreeMap;
use std::thread;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flops::{self, FlopCounter, Kernel};
use crate::linalg::{BlockVector, CsrMatrix, SmallSquare};
use crate::partition::{
    analyze_comm, split_local_blocks, CommPattern, LocalBlocks, Locality, RowPartition, Topology,
};
use crate::schemes::{build_plan, CommPlan, CommStats, PhaseKind, Scheme, StatsAccumulator};

/// Runs per-rank closures on a fixed number of OS threads. Results always
/// come back in rank order, so output does not depend on the worker count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Executor {
    workers: usize,
}

impl Default for Executor {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

impl Executor {
    pub fn new(workers: usize) -> Self {
        Self {
            workers: workers.max(1),
        }
    }

    /// Worker count from `ECG_THREADS`, defaulting to one.
    pub fn from_env() -> Self {
        let workers = std::env::var("ECG_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(1);
        Self::new(workers)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        if self.workers == 1 || n <= 1 {
            return (0..n).map(f).collect();
        }
        let chunk = n.div_ceil(self.workers);
        let f = &f;
        thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|lo| s.spawn(move || (lo..(lo + chunk).min(n)).map(f).collect::<Vec<T>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    }

    /// Applies `f` to every item with its index, returning results in order.
    pub fn map_mut<T, R, F>(&self, items: &mut [T], f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(usize, &mut T) -> R + Sync,
    {
        if self.workers == 1 || items.len() <= 1 {
            return items.iter_mut().enumerate().map(|(i, x)| f(i, x)).collect();
        }
        let chunk = items.len().div_ceil(self.workers);
        let f = &f;
        thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks_mut(chunk)
                .enumerate()
                .map(|(c, slice)| {
                    s.spawn(move || {
                        slice
                            .iter_mut()
                            .enumerate()
                            .map(|(i, x)| f(c * chunk + i, x))
                            .collect::<Vec<R>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    }

    pub fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync,
    {
        self.map_mut(items, f);
    }
}

/// A matrix distributed by rows, with its communication pattern.
#[derive(Debug, Clone)]
pub struct DistMatrix {
    n: usize,
    nnz: usize,
    pattern: CommPattern,
    blocks: Vec<LocalBlocks>,
}

impl DistMatrix {
    pub fn new(a: &CsrMatrix, partition: &RowPartition, topology: Topology) -> Result<Self> {
        let pattern = analyze_comm(a, partition, topology)?;
        let blocks = (0..partition.n_ranks())
            .map(|rank| split_local_blocks(a, partition, rank))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n: a.n_rows(),
            nnz: a.nnz(),
            pattern,
            blocks,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn n_ranks(&self) -> usize {
        self.blocks.len()
    }

    pub fn topology(&self) -> Topology {
        self.pattern.topology()
    }

    pub fn partition(&self) -> &RowPartition {
        self.pattern.partition()
    }

    pub fn pattern(&self) -> &CommPattern {
        &self.pattern
    }

    pub fn block(&self, rank: usize) -> &LocalBlocks {
        &self.blocks[rank]
    }

    pub fn plan(&self, scheme: Scheme, t: usize, f: usize, threshold: usize) -> Result<CommPlan> {
        build_plan(scheme, &self.pattern, t, f, threshold)
    }
}

/// One block of rows per rank.
#[derive(Debug, Clone, PartialEq)]
pub struct DistBlockVector {
    parts: Vec<BlockVector>,
}

impl DistBlockVector {
    pub fn zeros(partition: &RowPartition, t: usize) -> Self {
        Self {
            parts: (0..partition.n_ranks())
                .map(|r| BlockVector::zeros(partition.n_local(r), t))
                .collect(),
        }
    }

    pub fn from_parts(parts: Vec<BlockVector>) -> Result<Self> {
        let t = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no parts".into()))?
            .t();
        if let Some(bad) = parts.iter().find(|p| p.t() != t) {
            return Err(Error::DimensionMismatch {
                context: "DistBlockVector width",
                expected: t,
                got: bad.t(),
            });
        }
        Ok(Self { parts })
    }

    pub fn scatter(global: &BlockVector, partition: &RowPartition) -> Result<Self> {
        if global.n_rows() != partition.n_rows() {
            return Err(Error::DimensionMismatch {
                context: "scatter rows",
                expected: partition.n_rows(),
                got: global.n_rows(),
            });
        }
        Ok(Self {
            parts: (0..partition.n_ranks())
                .map(|r| global.slice_rows(partition.range(r)))
                .collect(),
        })
    }

    pub fn gather(&self) -> BlockVector {
        BlockVector::vstack(&self.parts).expect("parts share a width")
    }

    pub fn t(&self) -> usize {
        self.parts[0].t()
    }

    pub fn n_ranks(&self) -> usize {
        self.parts.len()
    }

    pub fn part(&self, rank: usize) -> &BlockVector {
        &self.parts[rank]
    }

    pub fn parts(&self) -> &[BlockVector] {
        &self.parts
    }

    pub fn parts_mut(&mut self) -> &mut [BlockVector] {
        &mut self.parts
    }

    pub fn into_parts(self) -> Vec<BlockVector> {
        self.parts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhaseTrace {
    pub kind: PhaseKind,
    pub messages: usize,
    pub bytes_on_node: usize,
    pub bytes_off_node: usize,
}

/// One global reduction: `floats` block values per rank plus `aux_floats`
/// scalars piggybacked on the same message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReduceRecord {
    pub floats: usize,
    pub aux_floats: usize,
    pub ranks: usize,
}

/// Everything a sequence of exchanges, reductions and kernels did.
#[derive(Debug, Clone, Serialize)]
pub struct ExecutionTrace {
    pub scheme: Option<Scheme>,
    pub p: usize,
    pub ppn: usize,
    pub t: usize,
    pub phases: Vec<PhaseTrace>,
    pub collectives: Vec<ReduceRecord>,
    pub flops_per_rank: Vec<FlopCounter>,
    #[serde(skip)]
    log: Vec<(usize, usize, usize)>,
    #[serde(skip)]
    topology: Topology,
}

impl ExecutionTrace {
    pub fn new(topology: Topology, t: usize, scheme: Option<Scheme>) -> Self {
        Self {
            scheme,
            p: topology.p(),
            ppn: topology.ppn(),
            t,
            phases: Vec::new(),
            collectives: Vec::new(),
            flops_per_rank: vec![FlopCounter::default(); topology.p()],
            log: Vec::new(),
            topology,
        }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Every message sent, as `(src, dst, bytes)`, in execution order.
    pub fn message_log(&self) -> &[(usize, usize, usize)] {
        &self.log
    }

    pub fn message_count(&self) -> usize {
        self.log.len()
    }

    pub fn bytes_on_node(&self) -> usize {
        self.phases.iter().map(|p| p.bytes_on_node).sum()
    }

    pub fn bytes_off_node(&self) -> usize {
        self.phases.iter().map(|p| p.bytes_off_node).sum()
    }

    /// Message and byte maxima over everything logged.
    pub fn comm_stats(&self) -> CommStats {
        let mut acc = StatsAccumulator::new(self.topology, self.t);
        for &(src, dst, bytes) in &self.log {
            acc.record(src, dst, bytes);
        }
        acc.finish()
    }

    pub fn record_flops(&mut self, rank: usize, kernel: Kernel, flops: u64) {
        self.flops_per_rank[rank].record(kernel, flops);
    }

    pub fn total_flops(&self) -> FlopCounter {
        let mut total = FlopCounter::default();
        for f in &self.flops_per_rank {
            total.merge(f);
        }
        total
    }

    /// Appends `other`'s phases, reductions and messages and adds its flops.
    pub fn absorb(&mut self, other: &ExecutionTrace) {
        self.phases.extend_from_slice(&other.phases);
        self.collectives.extend_from_slice(&other.collectives);
        self.log.extend_from_slice(&other.log);
        for (mine, theirs) in self.flops_per_rank.iter_mut().zip(&other.flops_per_rank) {
            mine.merge(theirs);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Remote rows delivered to one rank, ordered by ascending global row.
#[derive(Debug, Clone, PartialEq)]
pub struct RecvBuffer {
    pub rows: Vec<usize>,
    pub data: BlockVector,
}

fn check_plan_layout(plan: &CommPlan, v: &DistBlockVector) -> Result<()> {
    if v.n_ranks() != plan.p {
        return Err(Error::DimensionMismatch {
            context: "plan ranks",
            expected: plan.p,
            got: v.n_ranks(),
        });
    }
    if v.t() != plan.t {
        return Err(Error::DimensionMismatch {
            context: "plan block width",
            expected: plan.t,
            got: v.t(),
        });
    }
    for (rank, part) in v.parts().iter().enumerate() {
        let n = plan.partition().n_local(rank);
        if part.n_rows() != n {
            return Err(Error::DimensionMismatch {
                context: "local rows",
                expected: n,
                got: part.n_rows(),
            });
        }
    }
    Ok(())
}

/// Runs `plan` on `v`, returning each rank's receive buffer and the trace.
pub fn execute_plan(
    plan: &CommPlan,
    v: &DistBlockVector,
    exec: &Executor,
) -> Result<(Vec<RecvBuffer>, ExecutionTrace)> {
    check_plan_layout(plan, v)?;
    let topo = plan.topology();
    let part = plan.partition();
    let t = plan.t;
    let mut trace = ExecutionTrace::new(topo, t, Some(plan.scheme));
    let mut held: Vec<BTreeMap<usize, Vec<f64>>> = vec![BTreeMap::new(); plan.p];

    for (phase_index, phase) in plan.phases.iter().enumerate() {
        let held_ref = &held;
        let payloads = exec.map(phase.messages.len(), |i| {
            let msg = &phase.messages[i];
            let own = part.range(msg.src);
            let mut payload = Vec::with_capacity(msg.rows.len() * t);
            for &row in &msg.rows {
                if own.contains(&row) {
                    let local = v.part(msg.src);
                    payload.extend((0..t).map(|c| local.get(row - own.start, c)));
                } else {
                    let values = held_ref[msg.src].get(&row).ok_or(Error::RowNotHeld {
                        rank: msg.src,
                        row,
                        phase: phase_index,
                    })?;
                    payload.extend_from_slice(values);
                }
            }
            Ok::<_, Error>(payload)
        });

        let mut summary = PhaseTrace {
            kind: phase.kind,
            messages: phase.messages.len(),
            bytes_on_node: 0,
            bytes_off_node: 0,
        };
        for (msg, payload) in phase.messages.iter().zip(payloads) {
            let payload = payload?;
            let bytes = payload.len() * plan.f;
            match topo.locality(msg.src, msg.dst) {
                Locality::OffNode => summary.bytes_off_node += bytes,
                _ => summary.bytes_on_node += bytes,
            }
            trace.log.push((msg.src, msg.dst, bytes));
            let inbox = &mut held[msg.dst];
            for (k, &row) in msg.rows.iter().enumerate() {
                inbox
                    .entry(row)
                    .or_insert_with(|| payload[k * t..(k + 1) * t].to_vec());
            }
        }
        trace.phases.push(summary);
    }

    let buffers = (0..plan.p)
        .map(|rank| {
            let rows = plan.demands(rank).to_vec();
            let mut data = BlockVector::zeros(rows.len(), t);
            for (k, &row) in rows.iter().enumerate() {
                let values = held[rank].get(&row).ok_or(Error::MissingRow { rank, row })?;
                for (c, &x) in values.iter().enumerate() {
                    data.set(k, c, x);
                }
            }
            Ok(RecvBuffer { rows, data })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((buffers, trace))
}

fn local_product(block: &LocalBlocks, v: &BlockVector, recv: &BlockVector) -> BlockVector {
    let n = block.rows.len();
    let t = v.t();
    let mut out = BlockVector::zeros(n, t);
    for c in 0..t {
        let vc = v.column(c);
        let rc = recv.column(c);
        let oc = out.column_mut(c);
        for (row, o) in oc.iter_mut().enumerate() {
            let (cols, vals) = block.on_process.row(row);
            let mut acc = 0.0;
            for (&j, &a) in cols.iter().zip(vals) {
                acc += a * vc[j];
            }
            let (cols, vals) = block.off_process.row(row);
            for (&j, &a) in cols.iter().zip(vals) {
                acc += a * rc[j];
            }
            *o = acc;
        }
    }
    out
}

/// Distributed `W = A V`: exchange halo rows with `plan`, then multiply
/// locally on every rank.
pub fn spmbv(
    matrix: &DistMatrix,
    v: &DistBlockVector,
    plan: &CommPlan,
    exec: &Executor,
) -> Result<(DistBlockVector, ExecutionTrace)> {
    if plan.partition() != matrix.partition() {
        return Err(Error::InvalidArgument(
            "plan was built for a different partition".into(),
        ));
    }
    let (buffers, mut trace) = execute_plan(plan, v, exec)?;
    for (rank, buf) in buffers.iter().enumerate() {
        if buf.rows != matrix.block(rank).remote_columns {
            return Err(Error::InvalidArgument(format!(
                "plan demands for rank {rank} differ from the matrix halo"
            )));
        }
    }
    let t = v.t();
    let parts = exec.map(matrix.n_ranks(), |rank| {
        local_product(matrix.block(rank), v.part(rank), &buffers[rank].data)
    });
    for rank in 0..matrix.n_ranks() {
        trace.record_flops(
            rank,
            Kernel::Spmbv,
            flops::spmbv_flops(matrix.block(rank).nnz(), t),
        );
    }
    Ok((DistBlockVector { parts }, trace))
}

/// Per-rank contribution to a fused reduction: `t x t` blocks followed by
/// scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct ReduceBuffer {
    pub squares: Vec<SmallSquare>,
    pub scalars: Vec<f64>,
}

impl ReduceBuffer {
    /// Block payload, excluding the scalars.
    pub fn block_floats(&self) -> usize {
        self.squares.iter().map(|s| s.t() * s.t()).sum()
    }

    pub fn floats(&self) -> usize {
        self.block_floats() + self.scalars.len()
    }
}

/// Elementwise sum over ranks, accumulated in rank order. Every rank receives
/// the same result, so one copy is returned.
pub fn fused_allreduce(locals: &[ReduceBuffer]) -> Result<(ReduceBuffer, ReduceRecord)> {
    let first = locals
        .first()
        .ok_or_else(|| Error::InvalidArgument("reduction over zero ranks".into()))?;
    let shape: Vec<usize> = first.squares.iter().map(SmallSquare::t).collect();
    for (rank, buf) in locals.iter().enumerate() {
        let conforms = buf.squares.len() == shape.len()
            && buf.squares.iter().zip(&shape).all(|(s, &t)| s.t() == t)
            && buf.scalars.len() == first.scalars.len();
        if !conforms {
            return Err(Error::Conformance {
                rank,
                expected: first.floats(),
                got: buf.floats(),
            });
        }
    }
    let mut squares: Vec<Vec<f64>> = first.squares.iter().map(|s| s.data().to_vec()).collect();
    let mut scalars = first.scalars.clone();
    for buf in &locals[1..] {
        for (acc, s) in squares.iter_mut().zip(&buf.squares) {
            acc.iter_mut().zip(s.data()).for_each(|(a, b)| *a += b);
        }
        scalars.iter_mut().zip(&buf.scalars).for_each(|(a, b)| *a += b);
    }
    let squares = squares
        .into_iter()
        .zip(&shape)
        .map(|(d, &t)| SmallSquare::from_row_major(t, d))
        .collect::<Result<Vec<_>>>()?;
    let record = ReduceRecord {
        floats: first.block_floats(),
        aux_floats: first.scalars.len(),
        ranks: locals.len(),
    };
    Ok((ReduceBuffer { squares, scalars }, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::build_row_partition;
    use crate::problems::{laplace_1d, laplace_2d};

    fn ramp(n: usize, t: usize) -> BlockVector {
        let data = (0..n * t).map(|k| (k as f64 * 0.37).sin()).collect();
        BlockVector::from_column_major(n, t, data).unwrap()
    }

    #[test]
    fn executor_preserves_order() {
        for w in [1, 2, 3, 8] {
            let exec = Executor::new(w);
            assert_eq!(exec.map(7, |i| i * i), vec![0, 1, 4, 9, 16, 25, 36]);
            let mut v = vec![0usize; 5];
            exec.for_each_mut(&mut v, |i, x| *x = i + 1);
            assert_eq!(v, vec![1, 2, 3, 4, 5]);
        }
    }

    #[test]
    fn spmbv_matches_serial_for_every_scheme() {
        let a = laplace_2d(9, 7).unwrap();
        let part = build_row_partition(a.n_rows(), 8).unwrap();
        let dm = DistMatrix::new(&a, &part, Topology::new(8, 3).unwrap()).unwrap();
        let v = ramp(a.n_rows(), 3);
        let expected = a.spmbv(&v).unwrap();
        let dv = DistBlockVector::scatter(&v, &part).unwrap();
        for scheme in Scheme::ALL {
            let plan = dm.plan(scheme, 3, 8, 16).unwrap();
            let (w, trace) = spmbv(&dm, &dv, &plan, &Executor::new(2)).unwrap();
            let got = w.gather();
            for (x, y) in got.data().iter().zip(expected.data()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{scheme}");
            }
            assert_eq!(trace.message_count(), plan.message_count());
        }
    }

    #[test]
    fn trace_counts_match_plan() {
        let a = laplace_1d(8).unwrap();
        let part = build_row_partition(8, 4).unwrap();
        let dm = DistMatrix::new(&a, &part, Topology::new(4, 2).unwrap()).unwrap();
        let plan = dm.plan(Scheme::Standard, 1, 8, 8192).unwrap();
        let v = DistBlockVector::zeros(&part, 1);
        let (bufs, trace) = execute_plan(&plan, &v, &Executor::default()).unwrap();
        assert_eq!(bufs[1].rows, vec![1, 4]);
        assert_eq!(trace.bytes_off_node(), 16);
        assert_eq!(trace.bytes_on_node(), 32);
        assert_eq!(trace.comm_stats(), crate::schemes::plan_stats(&plan));
    }

    #[test]
    fn missing_row_is_reported() {
        let a = laplace_1d(8).unwrap();
        let part = build_row_partition(8, 4).unwrap();
        let dm = DistMatrix::new(&a, &part, Topology::new(4, 2).unwrap()).unwrap();
        let mut plan = dm.plan(Scheme::Standard, 1, 8, 8192).unwrap();
        plan.phases[0].messages.retain(|m| m.dst != 2);
        let v = DistBlockVector::zeros(&part, 1);
        let err = execute_plan(&plan, &v, &Executor::default()).unwrap_err();
        assert!(matches!(err, Error::MissingRow { rank: 2, .. }), "{err:?}");
    }

    #[test]
    fn unheld_row_is_reported() {
        let a = laplace_1d(8).unwrap();
        let part = build_row_partition(8, 4).unwrap();
        let dm = DistMatrix::new(&a, &part, Topology::new(4, 2).unwrap()).unwrap();
        let mut plan = dm.plan(Scheme::Standard, 1, 8, 8192).unwrap();
        // rank 0 does not hold row 5 at any point
        plan.phases[0].messages[0].rows = vec![5];
        let v = DistBlockVector::zeros(&part, 1);
        let err = execute_plan(&plan, &v, &Executor::default()).unwrap_err();
        assert_eq!(
            err,
            Error::RowNotHeld {
                rank: plan.phases[0].messages[0].src,
                row: 5,
                phase: 0
            }
        );
    }

    #[test]
    fn allreduce_sums_and_checks_shape() {
        let buf = |v: f64| ReduceBuffer {
            squares: vec![SmallSquare::from_row_major(2, vec![v; 4]).unwrap()],
            scalars: vec![v],
        };
        let (sum, rec) = fused_allreduce(&[buf(1.0), buf(2.0), buf(3.5)]).unwrap();
        assert_eq!(sum.squares[0].data(), &[6.5; 4]);
        assert_eq!(sum.scalars, vec![6.5]);
        assert_eq!(rec, ReduceRecord { floats: 4, aux_floats: 1, ranks: 3 });

        let (single, _) = fused_allreduce(&[buf(0.25)]).unwrap();
        assert_eq!(single, buf(0.25));

        let odd = ReduceBuffer {
            squares: vec![SmallSquare::zeros(3)],
            scalars: vec![0.0],
        };
        let err = fused_allreduce(&[buf(1.0), odd]).unwrap_err();
        assert!(matches!(err, Error::Conformance { rank: 1, .. }));
    }
}
