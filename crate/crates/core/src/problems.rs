//! Finite-difference Laplacians on the unit interval and unit square with
//! homogeneous Dirichlet boundaries, and a right-hand side of ones.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    /// 3-point stencil `[-1, 2, -1]`.
    Laplace1d { n: usize },
    /// 5-point stencil on an `nx x ny` grid.
    Laplace2d { nx: usize, ny: usize },
    /// 9-point stencil on an `nx x ny` grid.
    Laplace2d9 { nx: usize, ny: usize },
}

impl ProblemSpec {
    pub fn n_rows(&self) -> usize {
        match *self {
            ProblemSpec::Laplace1d { n } => n,
            ProblemSpec::Laplace2d { nx, ny } | ProblemSpec::Laplace2d9 { nx, ny } => nx * ny,
        }
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ProblemSpec::Laplace1d { n } => write!(f, "laplace1d:{n}"),
            ProblemSpec::Laplace2d { nx, ny } => write!(f, "laplace2d:{nx}x{ny}"),
            ProblemSpec::Laplace2d9 { nx, ny } => write!(f, "laplace2d9:{nx}x{ny}"),
        }
    }
}

impl FromStr for ProblemSpec {
    type Err = Error;

    /// Accepts `laplace1d:N`, `laplace2d:N`, `laplace2d:NXxNY`, `laplace2d9:N[xNY]`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized problem '{s}'"));
        let (kind, dims) = s.split_once(':').ok_or_else(bad)?;
        let parse = |d: &str| d.trim().parse::<usize>().map_err(|_| bad());
        let grid = || -> Result<(usize, usize)> {
            match dims.split_once('x') {
                Some((a, b)) => Ok((parse(a)?, parse(b)?)),
                None => {
                    let k = parse(dims)?;
                    Ok((k, k))
                }
            }
        };
        match kind {
            "laplace1d" => Ok(ProblemSpec::Laplace1d { n: parse(dims)? }),
            "laplace2d" => grid().map(|(nx, ny)| ProblemSpec::Laplace2d { nx, ny }),
            "laplace2d9" => grid().map(|(nx, ny)| ProblemSpec::Laplace2d9 { nx, ny }),
            _ => Err(bad()),
        }
    }
}

/// Matrix and all-ones right-hand side for `spec`.
pub fn generate_problem(spec: &ProblemSpec) -> Result<(CsrMatrix, Vec<f64>)> {
    let a = match *spec {
        ProblemSpec::Laplace1d { n } => laplace_1d(n)?,
        ProblemSpec::Laplace2d { nx, ny } => laplace_2d(nx, ny)?,
        ProblemSpec::Laplace2d9 { nx, ny } => laplace_2d_9pt(nx, ny)?,
    };
    let rhs = vec![1.0; a.n_rows()];
    Ok((a, rhs))
}

pub fn laplace_1d(n: usize) -> Result<CsrMatrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("laplace1d needs n >= 1".into()));
    }
    let mut triplets = Vec::with_capacity(3 * n);
    for i in 0..n {
        if i > 0 {
            triplets.push((i, i - 1, -1.0));
        }
        triplets.push((i, i, 2.0));
        if i + 1 < n {
            triplets.push((i, i + 1, -1.0));
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

fn grid_stencil(nx: usize, ny: usize, offsets: &[(isize, isize, f64)]) -> Result<CsrMatrix> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid dimensions must be positive (got {nx}x{ny})"
        )));
    }
    let n = nx * ny;
    let mut triplets = Vec::with_capacity(n * offsets.len());
    for j in 0..ny {
        for i in 0..nx {
            let row = j * nx + i;
            for &(di, dj, v) in offsets {
                let (ii, jj) = (i as isize + di, j as isize + dj);
                if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                    continue;
                }
                triplets.push((row, jj as usize * nx + ii as usize, v));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

pub fn laplace_2d(nx: usize, ny: usize) -> Result<CsrMatrix> {
    grid_stencil(
        nx,
        ny,
        &[
            (0, -1, -1.0),
            (-1, 0, -1.0),
            (0, 0, 4.0),
            (1, 0, -1.0),
            (0, 1, -1.0),
        ],
    )
}

pub fn laplace_2d_9pt(nx: usize, ny: usize) -> Result<CsrMatrix> {
    let mut offsets = Vec::with_capacity(9);
    for dj in -1..=1 {
        for di in -1..=1 {
            let v = if di == 0 && dj == 0 { 8.0 } else { -1.0 };
            offsets.push((di, dj, v));
        }
    }
    grid_stencil(nx, ny, &offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_d_stencil() {
        let a = laplace_1d(4).unwrap();
        assert_eq!(a.nnz(), 10);
        assert_eq!(
            a.to_dense(),
            vec![
                2.0, -1.0, 0.0, 0.0, //
                -1.0, 2.0, -1.0, 0.0, //
                0.0, -1.0, 2.0, -1.0, //
                0.0, 0.0, -1.0, 2.0
            ]
        );
    }

    #[test]
    fn five_point_counts() {
        let a = laplace_2d(3, 3).unwrap();
        assert_eq!(a.n_rows(), 9);
        // 9 diagonal + 2 * 12 neighbour pairs
        assert_eq!(a.nnz(), 33);
    }

    #[test]
    fn structurally_symmetric_positive_diagonal() {
        for a in [laplace_2d(7, 5).unwrap(), laplace_2d_9pt(6, 6).unwrap()] {
            assert!(a.is_symmetric());
            assert!((0..a.n_rows()).all(|i| a.get(i, i) > 0.0));
        }
    }

    #[test]
    fn spec_round_trip() {
        for s in ["laplace1d:8", "laplace2d:4x3", "laplace2d9:5x5"] {
            let spec: ProblemSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert_eq!(
            "laplace2d:32".parse::<ProblemSpec>().unwrap(),
            ProblemSpec::Laplace2d { nx: 32, ny: 32 }
        );
        assert!("poisson:3".parse::<ProblemSpec>().is_err());
        assert!(generate_problem(&ProblemSpec::Laplace2d { nx: 0, ny: 3 }).is_err());
    }

    #[test]
    fn rhs_is_ones() {
        let (_, b) = generate_problem(&ProblemSpec::Laplace1d { n: 5 }).unwrap();
        assert_eq!(b, vec![1.0; 5]);
    }
}
