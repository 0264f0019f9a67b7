//! Benchmark protocol and workload plumbing shared by the command line
//! tool: the dual-path matmul benchmark with its CSV output, the JSONL I/O
//! trace format, and trace-driven runs of the protection services.

mod matmul;
pub mod services;
pub mod trace;

pub use matmul::{
    bench_inputs, bench_matmul, read_csv, report_latency_reduction, write_csv, BenchMode,
    BenchPath, BenchPlan, BenchResult, BenchRow, DimCheck, LatencyReduction, Phase, PhaseStats,
    RowOutcome, CSV_HEADER,
};
pub use services::{expected_digests, fi_run, rdr_replay, FiReport, RdrReport};
pub use trace::{IoTraceRecord, ReplayOutcome};
