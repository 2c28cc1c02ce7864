//! A deterministic simulator for a lazy distributed n-dimensional array
//! runtime with communication latency-hiding.
//!
//! Array operations on block-cyclically distributed arrays are recorded
//! rather than executed. Recording splits every operation into
//! sub-view-block units and registers them with a dependency system that
//! keeps one insertion-ordered access list per block instead of a full
//! dependency graph. A flush then executes the recorded program over a
//! simulated message-passing transport with virtual per-rank clocks,
//! aggressively initiating transfers and computing in between so that
//! communication overlaps computation. A blocking engine, a full-graph
//! baseline, and per-kernel sequential oracles exist to check both the
//! results and the scheduling claims.

pub mod bench;
pub mod dag;
pub mod demo;
pub mod deps;
pub mod error;
pub mod flush;
pub mod layout;
pub mod node;
pub mod runtime;
pub mod store;
pub mod transport;
pub mod ufunc;
pub mod value;

pub use bench::{run_benchmark, sequential_oracle, BenchmarkSpec, Kernel, RunMetrics};
pub use error::{Error, Result};
pub use flush::{BspOutcome, ExecLog, LogEvent, LogRecord};
pub use layout::{decompose, is_aligned, ArrayBase, ArrayId, ArrayView, DimSlice, Rank};
pub use node::{Access, AccessMode, BlockKey, OpId, OpKind, OperationNode};
pub use runtime::{FlushMode, Runtime, RuntimeConfig};
pub use transport::{CommHandle, LatencyModel, Transport, TransportMessage};
pub use ufunc::{Operand, UfuncSpec};
pub use value::{Dtype, Scalar};
