use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecg_cli::{run_benchmark, Command, MatrixSource, OutputFormat, RunConfig, SchemeChoice};
use ecg_core::{generate_problem, write_matrix_market, PartitionStrategy, ProblemSpec};

#[derive(Parser)]
#[command(name = "ecg", version, about = "Enlarged CG and node-aware SpMBV experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a generated problem as a Matrix Market file.
    Generate {
        /// laplace1d:N, laplace2d:N[xM] or laplace2d9:N[xM]
        #[arg(long)]
        problem: String,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Run CG and ECG for each block width.
    Solve(RunArgs),
    /// Execute one SpMBV under every scheme.
    BenchSpmbv(RunArgs),
    /// Evaluate the cost models from plan statistics.
    Model(RunArgs),
    /// Rank the schemes by modeled exchange time.
    Tune(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Generated problem, e.g. laplace2d:128
    #[arg(long, conflicts_with = "matrix")]
    problem: Option<String>,
    /// Matrix Market file; the right-hand side is all ones
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(short, long, default_value_t = 16)]
    p: usize,
    #[arg(long, default_value_t = 4)]
    ppn: usize,
    /// Comma-separated block widths
    #[arg(short, long, value_delimiter = ',', default_value = "1,2,4,8")]
    t: Vec<usize>,
    /// standard, 2step, 3step, optimal or tuned
    #[arg(long, default_value = "standard")]
    scheme: String,
    /// equal-rows or equal-nonzeros
    #[arg(long, default_value = "equal-rows")]
    partition: String,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    maxit: usize,
    /// Nodal-optimal split threshold in bytes
    #[arg(long, default_value_t = ecg_core::DEFAULT_THRESHOLD)]
    threshold: usize,
    /// Machine parameter file (key = value lines)
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// json or csv
    #[arg(long, default_value = "json")]
    format: String,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, String> {
        let source = match (self.problem, self.matrix) {
            (_, Some(path)) => MatrixSource::File(path),
            (Some(spec), None) => MatrixSource::Problem(spec),
            (None, None) => MatrixSource::Problem("laplace2d:32".into()),
        };
        let partition = match self.partition.as_str() {
            "equal-rows" => PartitionStrategy::EqualRows,
            "equal-nonzeros" => PartitionStrategy::EqualNonzeros,
            other => return Err(format!("unknown partition '{other}'")),
        };
        let scheme: SchemeChoice = self.scheme.parse().map_err(|e| format!("{e}"))?;
        let format: OutputFormat = self.format.parse().map_err(|e| format!("{e}"))?;
        Ok(RunConfig {
            source,
            p: self.p,
            ppn: self.ppn,
            t: self.t,
            scheme,
            partition,
            tol: self.tol,
            maxit: self.maxit,
            threshold: self.threshold,
            params_file: self.params,
            output: self.output,
            format,
        })
    }
}

fn open_output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<(), String> {
    let (args, command) = match cli.command {
        Cmd::Generate { problem, output } => {
            let spec: ProblemSpec = problem.parse().map_err(|e| format!("{e}"))?;
            let (a, _) = generate_problem(&spec).map_err(|e| format!("{e}"))?;
            let file = BufWriter::new(File::create(&output).map_err(|e| e.to_string())?);
            return write_matrix_market(file, &a).map_err(|e| format!("{e}"));
        }
        Cmd::Solve(a) => (a, Command::Solve),
        Cmd::BenchSpmbv(a) => (a, Command::BenchSpmbv),
        Cmd::Model(a) => (a, Command::Model),
        Cmd::Tune(a) => (a, Command::Tune),
    };
    let config = args.into_config()?;
    let report = run_benchmark(&config, command).map_err(|e| format!("{e}"))?;
    let mut out = open_output(&config.output).map_err(|e| e.to_string())?;
    match config.format {
        OutputFormat::Json => out
            .write_all(report.to_json().as_bytes())
            .map_err(|e| e.to_string())?,
        OutputFormat::Csv => report.write_csv(&mut out).map_err(|e| format!("{e}"))?,
    }
    out.flush().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
