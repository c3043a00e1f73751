//! Shared fixtures for the criterion benches.

use ecg_core::problems::laplace_2d;
use ecg_core::{build_row_partition, BlockVector, DistBlockVector, DistMatrix, Result, Topology};

/// `nx x nx` 5-point Laplacian spread over `p` ranks, `ppn` per node.
pub fn grid(nx: usize, p: usize, ppn: usize) -> Result<DistMatrix> {
    let a = laplace_2d(nx, nx)?;
    let part = build_row_partition(a.n_rows(), p)?;
    DistMatrix::new(&a, &part, Topology::new(p, ppn)?)
}

/// Deterministic width-`t` block laid out on `matrix`'s partition.
pub fn block(matrix: &DistMatrix, t: usize) -> Result<DistBlockVector> {
    let n = matrix.n_rows();
    let data = (0..n * t).map(|k| ((k * 31) % 17) as f64 - 8.0).collect();
    DistBlockVector::scatter(&BlockVector::from_column_major(n, t, data)?, matrix.partition())
}
