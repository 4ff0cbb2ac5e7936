//! Requests, per-worker state and the two imbalance metrics.
//!
//! Loads are token counts. A request with prefill length `s` contributes
//! `s + j - 1` tokens on its `j`-th decode step, so every active request adds
//! exactly one token of KV footprint per step until it departs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::PredictionState;

pub type Tokens = u64;
pub type Step = u64;
pub type RequestId = u64;

/// One trace entry.
///
/// `output_len` is ground truth: the simulator and the oracle predictor may
/// read it, routers never see it (they receive [`WaitingRequest`] and
/// [`ActiveEntry`] views instead).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub arrival_step: Step,
    pub prefill_len: Tokens,
    pub output_len: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_key: Option<u64>,
}

impl Request {
    pub fn new(
        id: RequestId,
        arrival_step: Step,
        prefill_len: Tokens,
        output_len: u64,
    ) -> Result<Self> {
        let request = Self {
            id,
            arrival_step,
            prefill_len,
            output_len,
            prompt_key: None,
        };
        request.validate()?;
        Ok(request)
    }

    pub fn with_key(mut self, key: u64) -> Self {
        self.prompt_key = Some(key);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.prefill_len == 0 {
            return Err(Error::InvalidRequest {
                id: self.id,
                reason: "prefill length must be at least 1".into(),
            });
        }
        if self.output_len == 0 {
            return Err(Error::InvalidRequest {
                id: self.id,
                reason: "output length must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// The router-visible part of the request.
    pub fn waiting_view(&self) -> WaitingRequest {
        WaitingRequest {
            id: self.id,
            arrival_step: self.arrival_step,
            prefill_len: self.prefill_len,
            prompt_key: self.prompt_key,
        }
    }
}

/// Checks per-request invariants, id uniqueness and arrival order.
pub fn validate_trace(trace: &[Request]) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(trace.len());
    let mut last_arrival = 0;
    for request in trace {
        request.validate()?;
        if !seen.insert(request.id) {
            return Err(Error::DuplicateId(request.id));
        }
        if request.arrival_step < last_arrival {
            return Err(Error::UnsortedTrace(request.id));
        }
        last_arrival = request.arrival_step;
    }
    Ok(())
}

/// A request that finished prefill and waits for a decode slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaitingRequest {
    pub id: RequestId,
    pub arrival_step: Step,
    pub prefill_len: Tokens,
    pub prompt_key: Option<u64>,
}

/// A request decoding on some worker.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveEntry {
    pub request_id: RequestId,
    pub prefill_len: Tokens,
    pub prompt_key: Option<u64>,
    pub assign_step: Step,
    /// Completed decode steps, `k - assign_step` at step `k`.
    pub age: u64,
    pub prediction: Option<PredictionState>,
}

impl ActiveEntry {
    pub fn admitted(request: &WaitingRequest, step: Step) -> Self {
        Self {
            request_id: request.id,
            prefill_len: request.prefill_len,
            prompt_key: request.prompt_key,
            assign_step: step,
            age: 0,
            prediction: None,
        }
    }

    /// Current KV footprint, `s + a`.
    pub fn load(&self) -> Tokens {
        self.prefill_len + self.age
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub id: usize,
    pub capacity: usize,
    pub active: Vec<ActiveEntry>,
}

impl WorkerState {
    pub fn new(id: usize, capacity: usize) -> Self {
        Self {
            id,
            capacity,
            active: Vec::with_capacity(capacity),
        }
    }

    pub fn free_slots(&self) -> usize {
        self.capacity.saturating_sub(self.active.len())
    }

    pub fn load(&self) -> Tokens {
        self.active.iter().map(ActiveEntry::load).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub step: Step,
    pub workers: Vec<WorkerState>,
    /// FIFO by `(arrival_step, id)`.
    pub waiting: Vec<WaitingRequest>,
}

impl ClusterState {
    pub fn new(workers: usize, capacity: usize) -> Self {
        Self {
            step: 0,
            workers: (0..workers)
                .map(|g| WorkerState::new(g, capacity))
                .collect(),
            waiting: Vec::new(),
        }
    }

    pub fn loads(&self) -> Vec<Tokens> {
        self.workers.iter().map(WorkerState::load).collect()
    }

    pub fn free_slots(&self) -> usize {
        self.workers.iter().map(WorkerState::free_slots).sum()
    }

    pub fn active_count(&self) -> usize {
        self.workers.iter().map(|w| w.active.len()).sum()
    }

    /// Inserts keeping the `(arrival_step, id)` order.
    pub fn enqueue(&mut self, request: WaitingRequest) {
        let key = (request.arrival_step, request.id);
        let pos = self
            .waiting
            .partition_point(|w| (w.arrival_step, w.id) <= key);
        self.waiting.insert(pos, request);
    }
}

/// Workload of a request on the `j`-th step of its lifetime: `s + j - 1`.
pub fn step_workload(prefill_len: Tokens, lifetime_step: u64) -> Result<Tokens> {
    if lifetime_step == 0 {
        return Err(Error::ZeroLifetimeStep);
    }
    Ok(prefill_len + lifetime_step - 1)
}

/// `L_g(k)`: the sum of every active request's step-`(k - x + 1)` workload.
///
/// Entries must satisfy `assign_step <= k`.
pub fn instantaneous_load(worker: &WorkerState, step: Step) -> Tokens {
    worker
        .active
        .iter()
        .map(|e| e.prefill_len + (step - e.assign_step))
        .sum()
}

/// `G * max - sum`: the work lighter workers would have done at the heaviest
/// worker's level.
pub fn imbalance_total(loads: &[Tokens]) -> Result<Tokens> {
    let max = loads.iter().copied().max().ok_or(Error::EmptyLoads)?;
    let sum: Tokens = loads.iter().sum();
    Ok(max * loads.len() as Tokens - sum)
}

/// `max - min` of the per-worker loads.
pub fn imbalance_spread(loads: &[Tokens]) -> Result<Tokens> {
    let max = loads.iter().copied().max().ok_or(Error::EmptyLoads)?;
    let min = loads.iter().copied().min().ok_or(Error::EmptyLoads)?;
    Ok(max - min)
}
