//! Distributed CG and enlarged CG on the virtual cluster.
//!
//! ECG runs two reductions per iteration: `Z^T A Z` (with the squared norm of
//! the summed residual riding along as one scalar) and the fused
//! `[P^T R, (AP)^T AP, (AP_old)^T AP]`. Convergence is therefore detected at
//! the start of the pass after the update that achieved it; that pass stops
//! after its first reduction.

use serde::{Deserialize, Serialize};

use crate::cluster::{
    fused_allreduce, spmbv, DistBlockVector, DistMatrix, ExecutionTrace, Executor, ReduceBuffer,
    ReduceRecord,
};
use crate::error::{Error, Result};
use crate::flops::{self, FlopCounter, Kernel};
use crate::linalg::{
    block_axpy, cholesky, gram_product, tri_solve_multi_rhs_transposed, BlockVector, SmallSquare,
};
use crate::partition::{build_row_partition, RowPartition};
use crate::schemes::{plan_stats, CommPlan, CommStats, Scheme, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    /// `||r|| / ||b|| < tol`
    #[default]
    Relative,
    /// `||r|| < tol`
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub maxit: usize,
    pub convergence: Convergence,
    pub scheme: Scheme,
    /// Nodal-optimal split threshold in bytes.
    pub threshold: usize,
    /// Bytes per float.
    pub f: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            maxit: 1000,
            convergence: Convergence::Relative,
            scheme: Scheme::Standard,
            threshold: DEFAULT_THRESHOLD,
            f: 8,
        }
    }
}

/// Contiguous row ranges defining the `t` subdomains of the splitting operator.
///
/// When `t` divides the rank count, subdomain `i` is the union of ranks
/// `i p/t .. (i+1) p/t`; otherwise rows are split as evenly as possible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splitting {
    bounds: Vec<usize>,
}

impl Splitting {
    pub fn new(partition: &RowPartition, t: usize) -> Result<Self> {
        let n = partition.n_rows();
        let p = partition.n_ranks();
        if t == 0 || t > n {
            return Err(Error::InvalidArgument(format!(
                "enlarging factor t = {t} must be in 1..={n}"
            )));
        }
        let bounds = if p.is_multiple_of(t) {
            (0..=t).map(|i| partition.offsets()[i * p / t]).collect()
        } else {
            build_row_partition(n, t)?.offsets().to_vec()
        };
        Ok(Self { bounds })
    }

    pub fn t(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn subdomain(&self, row: usize) -> usize {
        self.bounds.partition_point(|&b| b <= row) - 1
    }
}

/// `T_{r,t}`: column `i` holds `r` restricted to subdomain `i`, zeros elsewhere.
pub fn split_residual(r: &[f64], t: usize, partition: &RowPartition) -> Result<BlockVector> {
    if r.len() != partition.n_rows() {
        return Err(Error::DimensionMismatch {
            context: "split_residual",
            expected: partition.n_rows(),
            got: r.len(),
        });
    }
    let splitting = Splitting::new(partition, t)?;
    let mut out = BlockVector::zeros(r.len(), t);
    for i in 0..t {
        let range = splitting.bounds[i]..splitting.bounds[i + 1];
        out.column_mut(i)[range.clone()].copy_from_slice(&r[range]);
    }
    Ok(out)
}

/// Flops of one ECG iteration on one rank, by the per-kernel closed forms:
/// one SpMBV, two block inner products, a Cholesky factorization, triangular
/// solves, one block addition and one block axpy.
pub fn iteration_flops(n: usize, nnz: usize, p: usize, t: usize) -> Result<f64> {
    if t == 0 || p == 0 {
        return Err(Error::InvalidArgument("t and p must be positive".into()));
    }
    let (n_p, nnz_p, t) = (n as f64 / p as f64, nnz as f64 / p as f64, t as f64);
    let spmbv = 2.0 * nnz_p * t;
    let inner = 2.0 * n_p * t * t;
    let chol = t * t * t / 6.0;
    let tri = 2.0 * 0.5 * t * t;
    let addition = 2.0 * n_p * t;
    let axpy = 2.0 * n_p * t;
    Ok(spmbv + 2.0 * inner + chol + tri + addition + axpy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cg,
    Ecg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakdownInfo {
    /// Pass in which the factorization failed.
    pub pass: usize,
    pub index: usize,
    pub pivot: f64,
}

/// Counts for one pass of the iteration loop.
#[derive(Debug, Clone, Serialize)]
pub struct PassRecord {
    pub pass: usize,
    /// Residual norm known at the start of the pass, relative to `||b||`.
    pub relative_residual: f64,
    pub messages: usize,
    pub bytes_on_node: usize,
    pub bytes_off_node: usize,
    pub collectives: Vec<ReduceRecord>,
    /// Largest per-rank flop total in this pass.
    pub max_rank_flops: u64,
    /// Whether the pass updated the iterate.
    pub updated: bool,
    #[serde(skip)]
    pub kernel_flops: Vec<FlopCounter>,
}

impl PassRecord {
    fn from_trace(pass: usize, relative_residual: f64, trace: &ExecutionTrace, updated: bool) -> Self {
        Self {
            pass,
            relative_residual,
            messages: trace.message_count(),
            bytes_on_node: trace.bytes_on_node(),
            bytes_off_node: trace.bytes_off_node(),
            collectives: trace.collectives.clone(),
            max_rank_flops: trace
                .flops_per_rank
                .iter()
                .map(FlopCounter::total)
                .max()
                .unwrap_or(0),
            updated,
            kernel_flops: trace.flops_per_rank.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub method: Method,
    pub scheme: Scheme,
    pub t: usize,
    pub n: usize,
    pub nnz: usize,
    pub p: usize,
    pub ppn: usize,
    pub tol: f64,
    pub convergence: Convergence,
    /// Number of iterate updates.
    pub iterations: usize,
    pub converged: bool,
    pub breakdown: Option<BreakdownInfo>,
    pub b_norm: f64,
    /// Norm of the (summed) residual before the first update and after each update.
    pub residual_history: Vec<f64>,
    pub final_relative_residual: f64,
    /// Message maxima of one halo exchange.
    pub spmbv_stats: CommStats,
    /// Flops over all ranks and passes, setup excluded.
    pub flops: FlopCounter,
    pub passes: Vec<PassRecord>,
    #[serde(skip)]
    pub x: Vec<f64>,
    #[serde(skip)]
    pub trace: ExecutionTrace,
}

impl SolveReport {
    pub fn relative_history(&self) -> Vec<f64> {
        let d = denominator(self.b_norm);
        self.residual_history.iter().map(|r| r / d).collect()
    }
}

fn denominator(b_norm: f64) -> f64 {
    if b_norm > 0.0 {
        b_norm
    } else {
        1.0
    }
}

fn is_converged(norm: f64, b_norm: f64, opts: &SolverOptions) -> bool {
    match opts.convergence {
        Convergence::Relative => norm / denominator(b_norm) < opts.tol,
        Convergence::Absolute => norm < opts.tol,
    }
}

fn check_inputs(matrix: &DistMatrix, b: &[f64], x0: Option<&[f64]>, opts: &SolverOptions) -> Result<()> {
    let n = matrix.n_rows();
    for v in std::iter::once(b).chain(x0) {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                context: "solver vector length",
                expected: n,
                got: v.len(),
            });
        }
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if opts.f == 0 {
        return Err(Error::InvalidArgument("bytes per float must be positive".into()));
    }
    Ok(())
}

fn scatter_vector(v: &[f64], partition: &RowPartition) -> DistBlockVector {
    let parts = (0..partition.n_ranks())
        .map(|r| {
            BlockVector::from_column_major(partition.n_local(r), 1, v[partition.range(r)].to_vec())
                .expect("slice matches local rows")
        })
        .collect();
    DistBlockVector::from_parts(parts).expect("uniform width")
}

fn dot_partial(u: &BlockVector, v: &BlockVector) -> f64 {
    u.column(0).iter().zip(v.column(0)).fold(0.0, |acc, (a, b)| acc + a * b)
}

fn scalar_reduce(partials: Vec<f64>, trace: &mut ExecutionTrace) -> Result<f64> {
    let locals: Vec<ReduceBuffer> = partials
        .into_iter()
        .map(|s| ReduceBuffer {
            squares: Vec::new(),
            scalars: vec![s],
        })
        .collect();
    let (sum, record) = fused_allreduce(&locals)?;
    trace.collectives.push(record);
    Ok(sum.scalars[0])
}

/// `r = b - A x0` on the cluster, or `b` when there is no initial guess.
fn initial_residual(
    matrix: &DistMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    plan_t1: &CommPlan,
    exec: &Executor,
    setup: &mut ExecutionTrace,
) -> Result<DistBlockVector> {
    let part = matrix.partition();
    let bd = scatter_vector(b, part);
    let Some(x0) = x0 else { return Ok(bd) };
    let (ax, trace) = spmbv(matrix, &scatter_vector(x0, part), plan_t1, exec)?;
    setup.absorb(&trace);
    let parts = bd
        .parts()
        .iter()
        .zip(ax.parts())
        .map(|(bp, ap)| {
            let data = bp.data().iter().zip(ap.data()).map(|(x, y)| x - y).collect();
            BlockVector::from_column_major(bp.n_rows(), 1, data).expect("same shape")
        })
        .collect();
    DistBlockVector::from_parts(parts)
}

fn finish_x(x0: Option<&[f64]>, sum: Vec<f64>) -> Vec<f64> {
    match x0 {
        Some(x0) => x0.iter().zip(sum).map(|(a, b)| a + b).collect(),
        None => sum,
    }
}

/// Distributed CG with two scalar reductions per iteration.
pub fn cg_solve(
    matrix: &DistMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &SolverOptions,
    exec: &Executor,
) -> Result<SolveReport> {
    check_inputs(matrix, b, x0, opts)?;
    let topo = matrix.topology();
    let part = matrix.partition().clone();
    let plan = matrix.plan(opts.scheme, 1, opts.f, opts.threshold)?;
    let mut setup = ExecutionTrace::new(topo, 1, Some(opts.scheme));

    let bd = scatter_vector(b, &part);
    let b_norm = scalar_reduce(
        bd.parts().iter().map(|v| dot_partial(v, v)).collect(),
        &mut setup,
    )?
    .sqrt();
    let r = initial_residual(matrix, b, x0, &plan, exec, &mut setup)?;
    let mut r = r.into_parts();
    let mut x: Vec<BlockVector> = r.iter().map(|v| BlockVector::zeros(v.n_rows(), 1)).collect();
    let mut p = r.clone();
    let mut rr = scalar_reduce(r.iter().map(|v| dot_partial(v, v)).collect(), &mut setup)?;

    let mut history = Vec::new();
    let mut passes = Vec::new();
    let mut total = ExecutionTrace::new(topo, 1, Some(opts.scheme));
    let mut iterations = 0;
    let mut converged = false;
    let mut breakdown = None;

    for pass in 1..=opts.maxit + 1 {
        let norm = rr.sqrt();
        history.push(norm);
        if is_converged(norm, b_norm, opts) {
            converged = true;
            break;
        }
        if pass == opts.maxit + 1 {
            break;
        }
        let (q, mut trace) = spmbv(matrix, &DistBlockVector::from_parts(p.clone())?, &plan, exec)?;
        let q = q.into_parts();
        let pq = scalar_reduce(
            p.iter().zip(&q).map(|(a, b)| dot_partial(a, b)).collect(),
            &mut trace,
        )?;
        if pq.is_nan() || pq <= 0.0 {
            breakdown = Some(BreakdownInfo {
                pass,
                index: 0,
                pivot: pq,
            });
            passes.push(PassRecord::from_trace(pass, norm / denominator(b_norm), &trace, false));
            total.absorb(&trace);
            break;
        }
        let alpha = rr / pq;
        let partials = exec.map(p.len(), |rank| {
            let xs = x[rank].column(0).iter().zip(p[rank].column(0)).map(|(a, b)| a + alpha * b);
            let rs = r[rank].column(0).iter().zip(q[rank].column(0)).map(|(a, b)| a - alpha * b);
            let xs: Vec<f64> = xs.collect();
            let rs: Vec<f64> = rs.collect();
            let rr_local = rs.iter().fold(0.0, |acc, v| acc + v * v);
            (xs, rs, rr_local)
        });
        let mut rr_parts = Vec::with_capacity(partials.len());
        for (rank, (xs, rs, rr_local)) in partials.into_iter().enumerate() {
            let n_local = xs.len();
            x[rank] = BlockVector::from_column_major(n_local, 1, xs)?;
            r[rank] = BlockVector::from_column_major(n_local, 1, rs)?;
            rr_parts.push(rr_local);
            // p.q, two axpys, r.r
            for _ in 0..4 {
                trace.record_flops(rank, Kernel::VectorOp, 2 * n_local as u64);
            }
        }
        let rr_new = scalar_reduce(rr_parts, &mut trace)?;
        let beta = rr_new / rr;
        rr = rr_new;
        for (rank, (pv, rv)) in p.iter_mut().zip(&r).enumerate() {
            let n_local = pv.n_rows();
            for (a, &b) in pv.column_mut(0).iter_mut().zip(rv.column(0)) {
                *a = b + beta * *a;
            }
            trace.record_flops(rank, Kernel::VectorOp, 2 * n_local as u64);
        }
        iterations += 1;
        passes.push(PassRecord::from_trace(pass, norm / denominator(b_norm), &trace, true));
        total.absorb(&trace);
    }

    let sum: Vec<f64> = x.iter().flat_map(|v| v.column(0).to_vec()).collect();
    let final_norm = *history.last().expect("at least one pass");
    Ok(SolveReport {
        method: Method::Cg,
        scheme: opts.scheme,
        t: 1,
        n: matrix.n_rows(),
        nnz: matrix.nnz(),
        p: topo.p(),
        ppn: topo.ppn(),
        tol: opts.tol,
        convergence: opts.convergence,
        iterations,
        converged,
        breakdown,
        b_norm,
        residual_history: history,
        final_relative_residual: final_norm / denominator(b_norm),
        spmbv_stats: plan_stats(&plan),
        flops: total.total_flops(),
        passes,
        x: finish_x(x0, sum),
        trace: total,
    })
}

struct EcgRank {
    x: BlockVector,
    r: BlockVector,
    z: BlockVector,
    az: BlockVector,
    p: BlockVector,
    ap: BlockVector,
    p_old: BlockVector,
    ap_old: BlockVector,
    flops: FlopCounter,
}

/// Global view of the ECG state handed to an observer after each update.
#[derive(Debug, Clone)]
pub struct EcgSnapshot {
    pub iteration: usize,
    /// Block iterate; the solution estimate is `x0 + sum_i X[:, i]`.
    pub x: BlockVector,
    pub r: BlockVector,
    pub z: BlockVector,
    pub p: BlockVector,
    pub ap: BlockVector,
}

pub fn ecg_solve(
    matrix: &DistMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    t: usize,
    opts: &SolverOptions,
    exec: &Executor,
) -> Result<SolveReport> {
    ecg_solve_observed(matrix, b, x0, t, opts, exec, None)
}

/// ECG with an optional observer called after every iterate update.
pub fn ecg_solve_observed(
    matrix: &DistMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    t: usize,
    opts: &SolverOptions,
    exec: &Executor,
    mut observer: Option<&mut dyn FnMut(&EcgSnapshot)>,
) -> Result<SolveReport> {
    check_inputs(matrix, b, x0, opts)?;
    let topo = matrix.topology();
    let part = matrix.partition().clone();
    let splitting = Splitting::new(&part, t)?;
    let plan = matrix.plan(opts.scheme, t, opts.f, opts.threshold)?;
    let mut setup = ExecutionTrace::new(topo, 1, Some(opts.scheme));

    let bd = scatter_vector(b, &part);
    let b_norm = scalar_reduce(
        bd.parts().iter().map(|v| dot_partial(v, v)).collect(),
        &mut setup,
    )?
    .sqrt();
    let plan_t1 = if x0.is_some() {
        Some(matrix.plan(opts.scheme, 1, opts.f, opts.threshold)?)
    } else {
        None
    };
    let r0 = match &plan_t1 {
        Some(plan_t1) => initial_residual(matrix, b, x0, plan_t1, exec, &mut setup)?,
        None => bd,
    };

    let mut ranks: Vec<EcgRank> = r0
        .parts()
        .iter()
        .enumerate()
        .map(|(rank, rv)| {
            let n_local = rv.n_rows();
            let start = part.range(rank).start;
            let mut r = BlockVector::zeros(n_local, t);
            for (local, &v) in rv.column(0).iter().enumerate() {
                r.set(local, splitting.subdomain(start + local), v);
            }
            let zeros = BlockVector::zeros(n_local, t);
            EcgRank {
                x: zeros.clone(),
                z: r.clone(),
                r,
                az: zeros.clone(),
                p: zeros.clone(),
                ap: zeros.clone(),
                p_old: zeros.clone(),
                ap_old: zeros,
                flops: FlopCounter::default(),
            }
        })
        .collect();

    let mut history = Vec::new();
    let mut passes = Vec::new();
    let mut total = ExecutionTrace::new(topo, t, Some(opts.scheme));
    let mut iterations = 0;
    let mut converged = false;
    let mut breakdown = None;

    for pass in 1..=opts.maxit + 1 {
        let z = DistBlockVector::from_parts(ranks.iter().map(|s| s.z.clone()).collect())?;
        let (az, mut trace) = spmbv(matrix, &z, &plan, exec)?;
        for (state, az) in ranks.iter_mut().zip(az.into_parts()) {
            state.az = az;
            state.flops = FlopCounter::default();
        }

        // Z^T A Z and the squared norm of the summed residual
        let locals = exec.map_mut(&mut ranks, |_, s| {
            let n_local = s.r.n_rows();
            let ztaz = gram_product(&s.z, &s.az)?;
            s.flops
                .record(Kernel::InnerProduct, flops::inner_product_flops(n_local, t));
            let norm2 = s.r.column_sum().iter().fold(0.0, |acc, v| acc + v * v);
            s.flops.record(Kernel::VectorOp, (n_local * (t + 1)) as u64);
            Ok::<_, Error>(ReduceBuffer {
                squares: vec![ztaz],
                scalars: vec![norm2],
            })
        });
        let locals = locals.into_iter().collect::<Result<Vec<_>>>()?;
        let (reduced, record) = fused_allreduce(&locals)?;
        trace.collectives.push(record);
        let norm = reduced.scalars[0].max(0.0).sqrt();
        history.push(norm);
        let relative = norm / denominator(b_norm);

        let done = is_converged(norm, b_norm, opts) || pass == opts.maxit + 1;
        let factor = if done {
            None
        } else {
            match cholesky(&reduced.squares[0]) {
                Ok(c) => Some(c),
                Err(Error::Breakdown { index, pivot, .. }) => {
                    breakdown = Some(BreakdownInfo { pass, index, pivot });
                    None
                }
                Err(e) => return Err(e),
            }
        };
        let Some(c) = factor else {
            converged = is_converged(norm, b_norm, opts);
            for (rank, s) in ranks.iter().enumerate() {
                trace.flops_per_rank[rank].merge(&s.flops);
            }
            passes.push(PassRecord::from_trace(pass, relative, &trace, false));
            total.absorb(&trace);
            break;
        };

        // P = Z C^{-T}, AP = AZ C^{-T}; local parts of the second reduction
        let locals = exec.map_mut(&mut ranks, |_, s| {
            let n_local = s.r.n_rows();
            s.flops.record(Kernel::Cholesky, flops::cholesky_flops(t));
            let p_new = tri_solve_multi_rhs_transposed(&s.z, &c)?;
            let ap_new = tri_solve_multi_rhs_transposed(&s.az, &c)?;
            for _ in 0..2 {
                s.flops.record(
                    Kernel::TriangularSolve,
                    flops::triangular_solve_flops(n_local, t),
                );
            }
            s.p_old = std::mem::replace(&mut s.p, p_new);
            s.ap_old = std::mem::replace(&mut s.ap, ap_new);
            let c_loc = gram_product(&s.p, &s.r)?;
            let d = gram_product(&s.ap, &s.ap)?;
            let d_old = gram_product(&s.ap_old, &s.ap)?;
            for _ in 0..3 {
                s.flops
                    .record(Kernel::InnerProduct, flops::inner_product_flops(n_local, t));
            }
            Ok::<_, Error>(ReduceBuffer {
                squares: vec![c_loc, d, d_old],
                scalars: Vec::new(),
            })
        });
        let locals = locals.into_iter().collect::<Result<Vec<_>>>()?;
        let (reduced, record) = fused_allreduce(&locals)?;
        trace.collectives.push(record);
        let [coef, d, d_old]: [SmallSquare; 3] = reduced
            .squares
            .try_into()
            .expect("three blocks were reduced");

        let updates = exec.map_mut(&mut ranks, |_, s| {
            let n_local = s.r.n_rows();
            block_axpy(&mut s.x, 1.0, &s.p, &coef)?;
            s.flops
                .record(Kernel::BlockAddition, flops::block_update_flops(n_local, t));
            block_axpy(&mut s.r, -1.0, &s.ap, &coef)?;
            s.flops
                .record(Kernel::BlockAxpy, flops::block_update_flops(n_local, t));
            let mut z = s.ap.clone();
            block_axpy(&mut z, -1.0, &s.p, &d)?;
            block_axpy(&mut z, -1.0, &s.p_old, &d_old)?;
            for _ in 0..2 {
                s.flops
                    .record(Kernel::BlockAxpy, flops::block_update_flops(n_local, t));
            }
            for _ in 0..4 {
                s.flops.record(
                    Kernel::CoefficientApply,
                    flops::coefficient_apply_flops(n_local, t),
                );
            }
            s.z = z;
            Ok::<_, Error>(())
        });
        updates.into_iter().collect::<Result<Vec<_>>>()?;
        iterations += 1;

        for (rank, s) in ranks.iter().enumerate() {
            trace.flops_per_rank[rank].merge(&s.flops);
        }
        passes.push(PassRecord::from_trace(pass, relative, &trace, true));
        total.absorb(&trace);

        if let Some(obs) = observer.as_mut() {
            let gather = |f: fn(&EcgRank) -> &BlockVector| {
                BlockVector::vstack(&ranks.iter().map(|s| f(s).clone()).collect::<Vec<_>>())
                    .expect("uniform width")
            };
            obs(&EcgSnapshot {
                iteration: iterations,
                x: gather(|s| &s.x),
                r: gather(|s| &s.r),
                z: gather(|s| &s.z),
                p: gather(|s| &s.p),
                ap: gather(|s| &s.ap),
            });
        }
    }

    let sum: Vec<f64> = ranks.iter().flat_map(|s| s.x.column_sum()).collect();
    let final_norm = *history.last().expect("at least one pass");
    Ok(SolveReport {
        method: Method::Ecg,
        scheme: opts.scheme,
        t,
        n: matrix.n_rows(),
        nnz: matrix.nnz(),
        p: topo.p(),
        ppn: topo.ppn(),
        tol: opts.tol,
        convergence: opts.convergence,
        iterations,
        converged,
        breakdown,
        b_norm,
        residual_history: history,
        final_relative_residual: final_norm / denominator(b_norm),
        spmbv_stats: plan_stats(&plan),
        flops: total.total_flops(),
        passes,
        x: finish_x(x0, sum),
        trace: total,
    })
}
