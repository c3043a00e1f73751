use std::io::Write;

use ecg_core::solvers::Method;
use ecg_core::{
    build_partition, cg_solve, ecg_iteration_model, ecg_solve, plan_stats, scheme_time, spmbv,
    tune::probe_block, tune_scheme, CommStats, DistBlockVector, DistMatrix, Error, Executor,
    IterationShape, MachineParams, ModelPrediction, ModelVariant, Result, Scheme, SolveReport,
    SolverOptions, Topology,
};
use serde::Serialize;

use crate::config::{RunConfig, SchemeChoice};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    BenchSpmbv,
    Model,
    Tune,
}

/// Modeled per-iteration seconds and their shares of the total, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelSummary {
    pub maxrate: ModelPrediction,
    pub postal_total: f64,
    pub pct_point_to_point: f64,
    pub pct_collective: f64,
    pub pct_computation: f64,
    /// Modeled exchange time of this row's scheme.
    pub scheme_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub method: Option<Method>,
    pub scheme: Scheme,
    pub t: usize,
    /// Whether the tuner picked this scheme (tune rows and tuned runs).
    pub selected: Option<bool>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub final_relative_residual: Option<f64>,
    /// Messages and bytes of one halo exchange as executed.
    pub messages: usize,
    pub bytes_on_node: usize,
    pub bytes_off_node: usize,
    /// Largest per-rank flop count of one iteration (or one SpMBV).
    pub flops: u64,
    pub stats: CommStats,
    pub model: ModelSummary,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: Command,
    pub config: RunConfig,
    pub n: usize,
    pub nnz: usize,
    pub params: MachineParams,
    pub rows: Vec<ReportRow>,
}

struct Context {
    matrix: DistMatrix,
    rhs: Vec<f64>,
    params: MachineParams,
    threshold: usize,
    exec: Executor,
}

fn setup(config: &RunConfig) -> Result<Context> {
    config.validate()?;
    let (a, rhs) = config.source.load()?;
    if config.p > a.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "p ({}) exceeds the number of rows ({})",
            config.p,
            a.n_rows()
        )));
    }
    let part = build_partition(&a, config.p, config.partition)?;
    let matrix = DistMatrix::new(&a, &part, Topology::new(config.p, config.ppn)?)?;
    Ok(Context {
        matrix,
        rhs,
        params: config.machine_params()?,
        threshold: config.threshold,
        exec: Executor::from_env(),
    })
}

fn summarize(ctx: &Context, scheme: Scheme, stats: &CommStats, t: usize) -> Result<ModelSummary> {
    let standard = plan_stats_for(ctx, Scheme::Standard, t)?;
    let shape = IterationShape {
        n: ctx.matrix.n_rows(),
        nnz: ctx.matrix.nnz(),
        p: ctx.matrix.n_ranks(),
        t,
    };
    let maxrate = ecg_iteration_model(&standard, shape, &ctx.params, ModelVariant::MaxRate);
    let postal = ecg_iteration_model(&standard, shape, &ctx.params, ModelVariant::Postal);
    let pct = |v: f64| {
        if maxrate.total > 0.0 {
            100.0 * v / maxrate.total
        } else {
            0.0
        }
    };
    Ok(ModelSummary {
        maxrate,
        postal_total: postal.total,
        pct_point_to_point: pct(maxrate.point_to_point),
        pct_collective: pct(maxrate.collective),
        pct_computation: pct(maxrate.computation),
        scheme_seconds: scheme_time(scheme, stats, t, &ctx.params),
    })
}

fn plan_stats_for(ctx: &Context, scheme: Scheme, t: usize) -> Result<CommStats> {
    let plan = ctx.matrix.plan(scheme, t, ctx.params.f, ctx.threshold)?;
    Ok(plan_stats(&plan))
}

fn resolve_scheme(ctx: &Context, config: &RunConfig, t: usize) -> Result<Scheme> {
    match config.scheme {
        SchemeChoice::Fixed(s) => Ok(s),
        SchemeChoice::Tuned => {
            Ok(tune_scheme(&ctx.matrix, t, config.threshold, &ctx.params, &ctx.exec)?.selected)
        }
    }
}

fn solve_row(ctx: &Context, rep: &SolveReport, selected: Option<bool>) -> Result<ReportRow> {
    let t = rep.t;
    let stats = rep.spmbv_stats;
    let first = rep.passes.iter().find(|p| p.updated);
    Ok(ReportRow {
        method: Some(rep.method),
        scheme: rep.scheme,
        t,
        selected,
        iterations: Some(rep.iterations),
        converged: Some(rep.converged),
        final_relative_residual: Some(rep.final_relative_residual),
        messages: stats.total_messages,
        bytes_on_node: stats.total_onnode_bytes,
        bytes_off_node: stats.total_internode_bytes,
        flops: first.map_or(0, |p| p.max_rank_flops),
        stats,
        model: summarize(ctx, rep.scheme, &stats, t)?,
        residual_history: rep.relative_history(),
    })
}

fn run_solve(ctx: &Context, config: &RunConfig) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    let base = SolverOptions {
        tol: config.tol,
        maxit: config.maxit,
        threshold: config.threshold,
        f: ctx.params.f,
        ..SolverOptions::default()
    };
    let tuned = config.scheme == SchemeChoice::Tuned;
    let cg_scheme = resolve_scheme(ctx, config, 1)?;
    let cg = cg_solve(
        &ctx.matrix,
        &ctx.rhs,
        None,
        &SolverOptions {
            scheme: cg_scheme,
            ..base
        },
        &ctx.exec,
    )?;
    rows.push(solve_row(ctx, &cg, tuned.then_some(true))?);
    for &t in &config.t {
        let scheme = resolve_scheme(ctx, config, t)?;
        let rep = ecg_solve(
            &ctx.matrix,
            &ctx.rhs,
            None,
            t,
            &SolverOptions { scheme, ..base },
            &ctx.exec,
        )?;
        rows.push(solve_row(ctx, &rep, tuned.then_some(true))?);
    }
    Ok(rows)
}

fn run_bench(ctx: &Context, config: &RunConfig) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for &t in &config.t {
        let selected = match config.scheme {
            SchemeChoice::Tuned => Some(resolve_scheme(ctx, config, t)?),
            SchemeChoice::Fixed(_) => None,
        };
        let v = DistBlockVector::scatter(
            &probe_block(ctx.matrix.n_rows(), t),
            ctx.matrix.partition(),
        )?;
        for scheme in Scheme::ALL {
            let plan = ctx.matrix.plan(scheme, t, ctx.params.f, config.threshold)?;
            let (_, trace) = spmbv(&ctx.matrix, &v, &plan, &ctx.exec)?;
            let stats = trace.comm_stats();
            rows.push(ReportRow {
                method: None,
                scheme,
                t,
                selected: selected.map(|s| s == scheme),
                iterations: None,
                converged: None,
                final_relative_residual: None,
                messages: trace.message_count(),
                bytes_on_node: trace.bytes_on_node(),
                bytes_off_node: trace.bytes_off_node(),
                flops: trace
                    .flops_per_rank
                    .iter()
                    .map(|f| f.total())
                    .max()
                    .unwrap_or(0),
                stats,
                model: summarize(ctx, scheme, &stats, t)?,
                residual_history: Vec::new(),
            });
        }
    }
    Ok(rows)
}

fn run_model(ctx: &Context, config: &RunConfig) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for &t in &config.t {
        for scheme in Scheme::ALL {
            let stats = plan_stats_for(ctx, scheme, t)?;
            rows.push(ReportRow {
                method: None,
                scheme,
                t,
                selected: None,
                iterations: None,
                converged: None,
                final_relative_residual: None,
                messages: stats.total_messages,
                bytes_on_node: stats.total_onnode_bytes,
                bytes_off_node: stats.total_internode_bytes,
                flops: 0,
                stats,
                model: summarize(ctx, scheme, &stats, t)?,
                residual_history: Vec::new(),
            });
        }
    }
    Ok(rows)
}

fn run_tune(ctx: &Context, config: &RunConfig) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for &t in &config.t {
        let rep = tune_scheme(&ctx.matrix, t, config.threshold, &ctx.params, &ctx.exec)?;
        for e in rep.entries {
            rows.push(ReportRow {
                method: None,
                scheme: e.scheme,
                t,
                selected: Some(e.scheme == rep.selected),
                iterations: None,
                converged: None,
                final_relative_residual: None,
                messages: e.stats.total_messages,
                bytes_on_node: e.stats.total_onnode_bytes,
                bytes_off_node: e.stats.total_internode_bytes,
                flops: 0,
                stats: e.stats,
                model: summarize(ctx, e.scheme, &e.stats, t)?,
                residual_history: Vec::new(),
            });
        }
    }
    Ok(rows)
}

/// Runs `command` for `config`. The result depends only on the inputs, never
/// on timing or the worker count.
pub fn run_benchmark(config: &RunConfig, command: Command) -> Result<Report> {
    let ctx = setup(config)?;
    let rows = match command {
        Command::Solve => run_solve(&ctx, config)?,
        Command::BenchSpmbv => run_bench(&ctx, config)?,
        Command::Model => run_model(&ctx, config)?,
        Command::Tune => run_tune(&ctx, config)?,
    };
    Ok(Report {
        schema: SCHEMA_VERSION,
        command,
        config: config.clone(),
        n: ctx.matrix.n_rows(),
        nnz: ctx.matrix.nnz(),
        params: ctx.params,
        rows,
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One flat line per row; the residual history is left to the JSON form.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        for row in &self.rows {
            out.serialize(CsvRow::from(row)).map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Serialize)]
struct CsvRow {
    method: String,
    scheme: Scheme,
    t: usize,
    selected: Option<bool>,
    iterations: Option<usize>,
    converged: Option<bool>,
    final_relative_residual: Option<f64>,
    messages: usize,
    bytes_on_node: usize,
    bytes_off_node: usize,
    flops: u64,
    m: usize,
    s: usize,
    s_proc: usize,
    s_node: usize,
    m_proc_to_node: usize,
    m_node_to_node: usize,
    s_node_to_node: usize,
    n_opt: usize,
    model_point_to_point: f64,
    model_collective: f64,
    model_computation: f64,
    model_total: f64,
    model_postal_total: f64,
    pct_point_to_point: f64,
    pct_collective: f64,
    pct_computation: f64,
    scheme_seconds: f64,
}

impl From<&ReportRow> for CsvRow {
    fn from(r: &ReportRow) -> Self {
        let method = match r.method {
            Some(Method::Cg) => "cg",
            Some(Method::Ecg) => "ecg",
            None => "spmbv",
        };
        Self {
            method: method.to_string(),
            scheme: r.scheme,
            t: r.t,
            selected: r.selected,
            iterations: r.iterations,
            converged: r.converged,
            final_relative_residual: r.final_relative_residual,
            messages: r.messages,
            bytes_on_node: r.bytes_on_node,
            bytes_off_node: r.bytes_off_node,
            flops: r.flops,
            m: r.stats.m,
            s: r.stats.s,
            s_proc: r.stats.s_proc,
            s_node: r.stats.s_node,
            m_proc_to_node: r.stats.m_proc_to_node,
            m_node_to_node: r.stats.m_node_to_node,
            s_node_to_node: r.stats.s_node_to_node,
            n_opt: r.stats.n_opt,
            model_point_to_point: r.model.maxrate.point_to_point,
            model_collective: r.model.maxrate.collective,
            model_computation: r.model.maxrate.computation,
            model_total: r.model.maxrate.total,
            model_postal_total: r.model.postal_total,
            pct_point_to_point: r.model.pct_point_to_point,
            pct_collective: r.model.pct_collective,
            pct_computation: r.model.pct_computation,
            scheme_seconds: r.model.scheme_seconds,
        }
    }
}
