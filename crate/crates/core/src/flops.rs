//! Per-kernel floating point operation tallies.
//!
//! Counting convention: a fused multiply-add is two flops. The n-dependent
//! kernels follow the per-call closed forms below; `cholesky` and
//! `triangular_solve` record the exact operation counts of the routines in
//! [`crate::linalg`].

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    Spmbv,
    InnerProduct,
    Cholesky,
    TriangularSolve,
    BlockAddition,
    BlockAxpy,
    /// The `x * coeff` product inside block additions and axpys.
    CoefficientApply,
    /// Single-vector dot products and axpys of the CG baseline.
    VectorOp,
}

impl Kernel {
    pub const ALL: [Kernel; 8] = [
        Kernel::Spmbv,
        Kernel::InnerProduct,
        Kernel::Cholesky,
        Kernel::TriangularSolve,
        Kernel::BlockAddition,
        Kernel::BlockAxpy,
        Kernel::CoefficientApply,
        Kernel::VectorOp,
    ];
}

/// `2 nnz t`
pub fn spmbv_flops(nnz: usize, t: usize) -> u64 {
    2 * (nnz * t) as u64
}

/// `2 n t^2`
pub fn inner_product_flops(n_rows: usize, t: usize) -> u64 {
    2 * (n_rows * t * t) as u64
}

/// `2 n t`, the update part of a block addition or axpy.
pub fn block_update_flops(n_rows: usize, t: usize) -> u64 {
    2 * (n_rows * t) as u64
}

/// `2 n t^2`
pub fn coefficient_apply_flops(n_rows: usize, t: usize) -> u64 {
    2 * (n_rows * t * t) as u64
}

/// `n t^2`: per row, `t(t-1)/2` multiply-subtracts and `t` divisions.
pub fn triangular_solve_flops(n_rows: usize, t: usize) -> u64 {
    (n_rows * t * t) as u64
}

/// `sum_j (2j + 1)(t - j)`, roughly `t^3 / 3`.
pub fn cholesky_flops(t: usize) -> u64 {
    (0..t).map(|j| ((2 * j + 1) * (t - j)) as u64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub calls: u64,
    pub flops: u64,
}

/// Flop tallies of one rank, by kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlopCounter {
    pub spmbv: Tally,
    pub inner_product: Tally,
    pub cholesky: Tally,
    pub triangular_solve: Tally,
    pub block_addition: Tally,
    pub block_axpy: Tally,
    pub coefficient_apply: Tally,
    pub vector_op: Tally,
}

impl FlopCounter {
    pub fn tally(&self, kernel: Kernel) -> Tally {
        match kernel {
            Kernel::Spmbv => self.spmbv,
            Kernel::InnerProduct => self.inner_product,
            Kernel::Cholesky => self.cholesky,
            Kernel::TriangularSolve => self.triangular_solve,
            Kernel::BlockAddition => self.block_addition,
            Kernel::BlockAxpy => self.block_axpy,
            Kernel::CoefficientApply => self.coefficient_apply,
            Kernel::VectorOp => self.vector_op,
        }
    }

    fn tally_mut(&mut self, kernel: Kernel) -> &mut Tally {
        match kernel {
            Kernel::Spmbv => &mut self.spmbv,
            Kernel::InnerProduct => &mut self.inner_product,
            Kernel::Cholesky => &mut self.cholesky,
            Kernel::TriangularSolve => &mut self.triangular_solve,
            Kernel::BlockAddition => &mut self.block_addition,
            Kernel::BlockAxpy => &mut self.block_axpy,
            Kernel::CoefficientApply => &mut self.coefficient_apply,
            Kernel::VectorOp => &mut self.vector_op,
        }
    }

    pub fn record(&mut self, kernel: Kernel, flops: u64) {
        let tally = self.tally_mut(kernel);
        tally.calls += 1;
        tally.flops += flops;
    }

    pub fn total(&self) -> u64 {
        Kernel::ALL.iter().map(|&k| self.tally(k).flops).sum()
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        for kernel in Kernel::ALL {
            let src = other.tally(kernel);
            let dst = self.tally_mut(kernel);
            dst.calls += src.calls;
            dst.flops += src.flops;
        }
    }
}
