//! Enlarged conjugate gradients with node-aware halo exchanges on a
//! deterministic in-process cluster, plus the analytic cost models used to
//! compare communication schemes.

pub mod cluster;
pub mod error;
pub mod flops;
pub mod linalg;
pub mod matrix_market;
pub mod models;
pub mod partition;
pub mod problems;
pub mod schemes;
pub mod solvers;
pub mod tune;

pub use cluster::{
    execute_plan, fused_allreduce, spmbv, DistBlockVector, DistMatrix, ExecutionTrace, Executor,
    PhaseTrace, RecvBuffer, ReduceBuffer, ReduceRecord,
};
pub use error::{Error, Result};
pub use flops::{FlopCounter, Kernel, Tally};
pub use linalg::{
    block_axpy, cholesky, gram_product, tri_solve_multi_rhs, tri_solve_multi_rhs_transposed,
    BlockVector, CsrMatrix, SmallSquare,
};
pub use matrix_market::{load_matrix_market, read_matrix_market, write_matrix_market};
pub use models::{
    collective_time, computation_time, ecg_iteration_model, maxrate_time, model_2step,
    model_3step, model_standard, postal_time, scheme_time, IterationShape, Link, MachineParams,
    ModelPrediction, ModelVariant,
};
pub use partition::{
    analyze_comm, build_partition, build_row_partition, CommPattern, Locality, PartitionStrategy,
    RowPartition, Topology,
};
pub use problems::{generate_problem, ProblemSpec};
pub use schemes::{build_plan, plan_stats, CommPlan, CommStats, Scheme, DEFAULT_THRESHOLD};
pub use solvers::{
    cg_solve, ecg_solve, ecg_solve_observed, iteration_flops, split_residual, Convergence,
    EcgSnapshot, SolveReport, SolverOptions,
};
pub use tune::{tune_scheme, TuneReport};
