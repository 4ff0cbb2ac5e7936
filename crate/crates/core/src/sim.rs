//! Discrete-step trace replay.
//!
//! Each step `k`: requests with `arrival_step <= k` join the waiting set, the
//! router admits some of them, the per-worker loads are recorded, every
//! active request decodes one token, and requests that reached their output
//! length depart. Steps where nothing is active or waiting are skipped.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    imbalance_spread, imbalance_total, validate_trace, ActiveEntry, ClusterState, Request,
    RequestId, Step, Tokens,
};
use crate::predictor::{
    initial_prediction, refresh_prediction, ExactMatchEstimator, LengthEstimator, OutputHistory,
    PredictionState, PredictorKind, RefreshOutcome, Source, SurvivalEstimator,
};
use crate::router::{Dispatch, Router, RouterParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub workers: usize,
    pub capacity: usize,
    pub router: RouterParams,
    /// ms per token of the heaviest worker's load.
    pub step_time_a: f64,
    /// Fixed ms per step.
    pub step_time_b: f64,
    pub max_steps: u64,
    /// Seeds the router's RNG; overrides `router.rng_seed`.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            workers: 8,
            capacity: 16,
            router: RouterParams::default(),
            step_time_a: 0.01,
            step_time_b: 50.0,
            max_steps: 50_000_000,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidParameter("G must be at least 1".into()));
        }
        if self.capacity == 0 {
            return Err(Error::InvalidParameter("B must be at least 1".into()));
        }
        if !(self.step_time_a >= 0.0) || !self.step_time_a.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step_time_a must be non-negative, got {}",
                self.step_time_a
            )));
        }
        if !(self.step_time_b > 0.0) || !self.step_time_b.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step_time_b must be positive, got {}",
                self.step_time_b
            )));
        }
        self.router.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: Step,
    pub loads: Vec<Tokens>,
    pub imbalance_total: Tokens,
    pub imbalance_spread: Tokens,
    pub admissions: usize,
    pub departures: usize,
    /// Requests decoding this step, i.e. output tokens produced.
    pub active: usize,
    pub step_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub avg_imbalance_spread: f64,
    pub avg_imbalance_total: f64,
    pub total_output_tokens: u64,
    pub total_time_ms: f64,
    pub throughput_proxy: f64,
    pub steps: u64,
    pub completed: usize,
    /// `(id, step)` pairs, where `step` is the last decode step.
    pub completion_steps: Vec<(RequestId, Step)>,
}

impl RunSummary {
    pub fn empty() -> Self {
        Self {
            avg_imbalance_spread: 0.0,
            avg_imbalance_total: 0.0,
            total_output_tokens: 0,
            total_time_ms: 0.0,
            throughput_proxy: 0.0,
            steps: 0,
            completed: 0,
            completion_steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub records: Vec<StepRecord>,
}

/// One fresh or refreshed `c_hat` of an active request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionEvent {
    pub step: Step,
    pub request_id: RequestId,
    pub age: u64,
    /// `None` at admission.
    pub previous: Option<PredictionState>,
    pub current: PredictionState,
    pub outcome: RefreshOutcome,
}

/// Hooks into a run, for instrumentation and invariant checks.
pub trait SimObserver {
    /// Called with the pre-admission state and the validated dispatch.
    fn on_dispatch(&mut self, _state: &ClusterState, _dispatch: &Dispatch) {}
    /// Called at the end of the step, after decode and departures; `record`
    /// holds the loads measured before decode.
    fn on_step(&mut self, _state: &ClusterState, _record: &StepRecord) {}
    fn on_prediction(&mut self, _event: &PredictionEvent) {}
}

struct NoObserver;

impl SimObserver for NoObserver {}

pub fn step_time(max_load: Tokens, a: f64, b: f64) -> f64 {
    a * max_load as f64 + b
}

/// Aggregates over records; idle records (no active request) are left out
/// of the imbalance averages and the elapsed time.
pub fn collect_metrics(records: &[StepRecord]) -> Result<RunSummary> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let busy: Vec<&StepRecord> = records.iter().filter(|r| r.active > 0).collect();
    let mut summary = RunSummary::empty();
    if busy.is_empty() {
        return Ok(summary);
    }
    let n = busy.len() as f64;
    summary.steps = busy.len() as u64;
    summary.avg_imbalance_spread = busy.iter().map(|r| r.imbalance_spread as f64).sum::<f64>() / n;
    summary.avg_imbalance_total = busy.iter().map(|r| r.imbalance_total as f64).sum::<f64>() / n;
    summary.total_output_tokens = busy.iter().map(|r| r.active as u64).sum();
    summary.total_time_ms = busy.iter().map(|r| r.step_time_ms).sum();
    summary.throughput_proxy =
        summary.total_output_tokens as f64 / (summary.total_time_ms / 1000.0);
    summary.completed = records.iter().map(|r| r.departures).sum();
    Ok(summary)
}

pub fn run_trace(
    trace: &[Request],
    config: &SimConfig,
    history: Option<&OutputHistory>,
) -> Result<RunOutput> {
    run_trace_observed(trace, config, history, &mut NoObserver)
}

/// Like [`run_trace`], reporting every dispatch, step and prediction to
/// `observer`. `history` feeds the survival and exact-match predictors.
pub fn run_trace_observed(
    trace: &[Request],
    config: &SimConfig,
    history: Option<&OutputHistory>,
    observer: &mut dyn SimObserver,
) -> Result<RunOutput> {
    config.validate()?;
    validate_trace(trace)?;
    let mut params = config.router.clone();
    params.rng_seed = config.seed;
    let mut router = Router::new(params)?;

    let predictor = router.params().predictor.clone();
    let predicting = router.params().needs_predictions();
    let survival;
    let exact;
    let estimator: Option<&dyn LengthEstimator> = match (predicting, predictor.kind) {
        (false, _) | (true, PredictorKind::Oracle) => None,
        (true, kind) => {
            let history = history.ok_or_else(|| {
                Error::InvalidParameter(format!("the {kind} predictor needs an output history"))
            })?;
            if kind == PredictorKind::Survival {
                survival = SurvivalEstimator(history);
                Some(&survival)
            } else {
                exact = ExactMatchEstimator(history);
                Some(&exact)
            }
        }
    };
    let source = |remaining: u64| match estimator {
        Some(e) => Source::Estimator(e),
        None => Source::Truth { remaining },
    };

    // The router never sees output lengths; only the engine and the oracle do.
    let outputs: HashMap<RequestId, u64> = trace.iter().map(|r| (r.id, r.output_len)).collect();

    let mut state = ClusterState::new(config.workers, config.capacity);
    let mut records = Vec::new();
    let mut completions = Vec::with_capacity(trace.len());
    let mut next = 0;
    let mut k: Step = trace.first().map_or(0, |r| r.arrival_step);

    while completions.len() < trace.len() {
        if k >= config.max_steps {
            return Err(Error::NonTermination {
                max_steps: config.max_steps,
                outstanding: trace.len() - completions.len(),
            });
        }
        if state.active_count() == 0 && state.waiting.is_empty() {
            k = k.max(trace[next].arrival_step);
        }
        state.step = k;
        while next < trace.len() && trace[next].arrival_step <= k {
            state.enqueue(trace[next].waiting_view());
            next += 1;
        }

        let dispatch = router.dispatch(&state)?;
        dispatch.validate(&state)?;
        observer.on_dispatch(&state, &dispatch);
        let admitted = dispatch.total();
        if admitted > 0 {
            let mut chosen = HashMap::with_capacity(admitted);
            for (g, ids) in dispatch.admissions.iter().enumerate() {
                for &id in ids {
                    chosen.insert(id, g);
                }
            }
            let mut kept = Vec::with_capacity(state.waiting.len() - admitted);
            for request in std::mem::take(&mut state.waiting) {
                let Some(&g) = chosen.get(&request.id) else {
                    kept.push(request);
                    continue;
                };
                let mut entry = ActiveEntry::admitted(&request, k);
                if predicting {
                    let refresh = initial_prediction(
                        0,
                        entry.prompt_key,
                        &predictor,
                        source(outputs[&entry.request_id]),
                    );
                    observer.on_prediction(&PredictionEvent {
                        step: k,
                        request_id: entry.request_id,
                        age: 0,
                        previous: None,
                        current: refresh.state,
                        outcome: refresh.outcome,
                    });
                    entry.prediction = Some(refresh.state);
                }
                state.workers[g].active.push(entry);
            }
            state.waiting = kept;
        }

        let loads = state.loads();
        let max = loads.iter().copied().max().unwrap_or(0);
        let mut record = StepRecord {
            k,
            imbalance_total: imbalance_total(&loads)?,
            imbalance_spread: imbalance_spread(&loads)?,
            loads,
            admissions: admitted,
            departures: 0,
            active: state.active_count(),
            step_time_ms: step_time(max, config.step_time_a, config.step_time_b),
        };

        for worker in &mut state.workers {
            worker.active.retain_mut(|entry| {
                entry.age += 1;
                let output = outputs[&entry.request_id];
                if entry.age >= output {
                    completions.push((entry.request_id, k));
                    record.departures += 1;
                    return false;
                }
                if let Some(prev) = entry.prediction {
                    let refresh = refresh_prediction(
                        &prev,
                        entry.age,
                        entry.prompt_key,
                        &predictor,
                        source(output - entry.age),
                    );
                    observer.on_prediction(&PredictionEvent {
                        step: k,
                        request_id: entry.request_id,
                        age: entry.age,
                        previous: Some(prev),
                        current: refresh.state,
                        outcome: refresh.outcome,
                    });
                    entry.prediction = Some(refresh.state);
                }
                true
            });
        }
        observer.on_step(&state, &record);
        records.push(record);
        k += 1;
    }

    let mut summary = if records.is_empty() {
        RunSummary::empty()
    } else {
        collect_metrics(&records)?
    };
    summary.completion_steps = completions;
    Ok(RunOutput { summary, records })
}
