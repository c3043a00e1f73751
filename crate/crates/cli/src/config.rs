use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use ecg_core::{
    generate_problem, load_matrix_market, CsrMatrix, Error, MachineParams,
    PartitionStrategy, ProblemSpec, Result, Scheme, DEFAULT_THRESHOLD,
};
use serde::Serialize;

/// A fixed exchange scheme, or `tuned` to pick one per block width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(into = "String")]
pub enum SchemeChoice {
    Fixed(Scheme),
    Tuned,
}

impl fmt::Display for SchemeChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeChoice::Fixed(s) => write!(f, "{s}"),
            SchemeChoice::Tuned => f.write_str("tuned"),
        }
    }
}

impl From<SchemeChoice> for String {
    fn from(c: SchemeChoice) -> Self {
        c.to_string()
    }
}

impl FromStr for SchemeChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "tuned" {
            Ok(SchemeChoice::Tuned)
        } else {
            s.parse().map(SchemeChoice::Fixed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixSource {
    /// Generator spec such as `laplace2d:32`.
    Problem(String),
    /// Matrix Market file; the right-hand side is all ones.
    File(PathBuf),
}

impl MatrixSource {
    pub fn load(&self) -> Result<(CsrMatrix, Vec<f64>)> {
        match self {
            MatrixSource::Problem(spec) => generate_problem(&spec.parse::<ProblemSpec>()?),
            MatrixSource::File(path) => {
                let a = load_matrix_market(path)?;
                let b = vec![1.0; a.n_rows()];
                Ok((a, b))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            _ => Err(Error::InvalidArgument(format!("unknown format '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub source: MatrixSource,
    pub p: usize,
    pub ppn: usize,
    /// Block widths to run; CG is always included in solves.
    pub t: Vec<usize>,
    pub scheme: SchemeChoice,
    pub partition: PartitionStrategy,
    pub tol: f64,
    pub maxit: usize,
    pub threshold: usize,
    pub params_file: Option<PathBuf>,
    #[serde(skip)]
    pub output: Option<PathBuf>,
    #[serde(skip)]
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: MatrixSource::Problem("laplace2d:32".into()),
            p: 16,
            ppn: 4,
            t: vec![1, 2, 4, 8],
            scheme: SchemeChoice::Fixed(Scheme::Standard),
            partition: PartitionStrategy::EqualRows,
            tol: 1e-8,
            maxit: 1000,
            threshold: DEFAULT_THRESHOLD,
            params_file: None,
            output: None,
            format: OutputFormat::Json,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.ppn == 0 {
            return Err(Error::InvalidArgument("p and ppn must be positive".into()));
        }
        if self.ppn > self.p {
            return Err(Error::InvalidArgument(format!(
                "ppn ({}) must not exceed p ({})",
                self.ppn, self.p
            )));
        }
        if self.t.is_empty() || self.t.contains(&0) {
            return Err(Error::InvalidArgument("every t must be at least 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.threshold == 0 {
            return Err(Error::InvalidArgument("threshold must be positive".into()));
        }
        Ok(())
    }

    /// Machine parameters from `params_file` (or defaults), with `ppn` taken
    /// from the run.
    pub fn machine_params(&self) -> Result<MachineParams> {
        let params = match &self.params_file {
            Some(path) => fs::read_to_string(path)?.parse::<MachineParams>()?,
            None => MachineParams::default(),
        };
        Ok(params.with_ppn(self.ppn))
    }
}
