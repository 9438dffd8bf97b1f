//! Latency and throughput benchmarks for the hub daemon, with summary
//! statistics and CSV output.

pub mod output;
pub mod runner;
pub mod stats;
pub mod workload;

pub use output::{emit_csv, outliers_path, render_csv, CSV_HEADER};
pub use runner::{
    connect, raise_priority, run_attr_latency_client, run_attr_latency_direct, run_client_latency, run_ep_latency,
    run_throughput, SimBench, ThroughputCell, ThroughputRun,
};
pub use stats::{linear_fit, BenchRecord, StatsError};
pub use workload::{BenchError, Direction, Kind, Variant, WorkloadSpec};
