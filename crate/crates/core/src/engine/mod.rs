//! End-to-end execution of rewritten plans, result verification,
//! synthetic workload generation, and the benchmark harness.

mod bench;
mod exec;
mod metrics;
mod verify;
mod workload;

pub use bench::{
    exact_columns, optimize_with, prepare, run_bench, run_strategy, BenchCell, BenchOptions,
    BenchReport, PreparedQuery, Strategy,
};
pub use exec::{execute, ExecOptions};
pub use metrics::{NodeMetrics, RunMetrics, StageTime};
pub use verify::{verify, VerifyReport};
pub use workload::{
    gen_workload, load_workload, save_workload, zipf_keys, ModelKind, Shape, Workload,
    WorkloadConfig,
};
