//! Trace-driven evaluation of online adaptation methods under time pressure.
//!
//! Three protocols score a recorded stream of per-batch latencies and
//! correctness counts:
//!
//! * [`discrete`]: fixed-interval arrivals, busy pipelines skip batches.
//! * [`continuous`]: greedy pacing with hyperbolic latency discounting.
//! * [`amortised`]: adaptation under a cumulative overhead budget.
//!
//! [`analysis`] compares methods across scenarios, [`oracle`] holds
//! brute-force cross-checks, [`provider`] drives live external harnesses and
//! [`sweep`] evaluates whole scenario grids.

pub mod amortised;
pub mod analysis;
pub mod continuous;
pub mod discrete;
pub mod error;
pub mod exec;
pub mod manifest;
pub mod oracle;
pub mod provider;
pub mod sweep;
pub mod time;
pub mod trace;

pub use error::{Error, Result, TraceError};
pub use exec::Execution;
pub use time::Nanos;
