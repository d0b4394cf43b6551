//! Continual-learning experiments on top of `lidcert-core`: task streams,
//! run configuration, certified training loops and reports.

pub mod config;
pub mod data;
pub mod error;
pub mod idx;
pub mod record;
pub mod run;

pub use config::{BiasConfig, BufferConfig, DatasetSpec, InfeasiblePolicy, NetworkConfig, RunConfig};
pub use data::{Protocol, SplitFractions, Task, TaskStream};
pub use error::{HarnessError, Result};
pub use record::{emit_report, to_csv, ReportFormat, RunRecord, TaskStep, Termination};
pub use run::{
    algorithms, baseline_sgd, build_stream, prepare, run_seeds, run_with_buffer, run_zero_buffer, ContinualAlgorithm,
    GuardedBox, RunOutcome,
};
