//! Load balancing for the decode stage of data-parallel LLM serving.
//!
//! Every decode step is a barrier across the `G` data-parallel workers, so the
//! slowest (most loaded) worker sets the pace for all of them. This crate
//! models per-worker KV workload in tokens, implements the prediction-free
//! two-stage balancer (`Br0`), its lookahead generalisation (`BrH`), the usual
//! stateless baselines, and a deterministic step simulator that replays traces
//! against any of them.
//!
//! Layout:
//!
//! - [`model`]: requests, worker state, imbalance metrics.
//! - [`scoring`]: the single-step and horizon F-scores.
//! - [`predictor`]: in-window contribution estimates and their refresh rules.
//! - [`projection`]: projected load trajectories, envelope and margins.
//! - [`subset`]: stage-2 subset selection (enumeration, bitset DP, two-probe).
//! - [`router`]: the routing policies.
//! - [`sim`]: the step engine and run metrics.

pub mod error;
pub mod model;
pub mod predictor;
pub mod projection;
pub mod router;
pub mod scoring;
pub mod sim;
pub mod subset;

pub use error::{Error, Result};
pub use model::{
    imbalance_spread, imbalance_total, instantaneous_load, step_workload, ActiveEntry,
    ClusterState, Request, RequestId, Step, Tokens, WaitingRequest, WorkerState,
};
pub use predictor::{OutputHistory, PredictionState, PredictorConfig, PredictorKind};
pub use projection::HorizonProjection;
pub use router::{Dispatch, P2cMetric, Router, RouterKind, RouterParams, SubsetMethod};
pub use scoring::{DiscountVector, ScoreParams};
pub use sim::{run_trace, RunOutput, RunSummary, SimConfig, SimObserver, StepRecord};
