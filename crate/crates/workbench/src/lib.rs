//! Trace ingestion, synthetic workloads, sweeps and result files for the
//! `dpbalance` simulator.

pub mod config;
pub mod emit;
pub mod error;
pub mod sweep;
pub mod synth;
pub mod trace;

pub use config::{RunConfig, SweepConfig};
pub use emit::{emit_results, emit_sweep};
pub use error::{Error, Result};
pub use sweep::{run_sweep, SweepAxes, SweepMode, SweepRow, SweepSpec, Workload};
pub use synth::{generate_synthetic, Burst, LengthDist, SynthSpec};
pub use trace::{load_trace, save_trace, LoadOptions, TraceFormat};
