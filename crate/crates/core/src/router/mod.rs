//! Routing policies: map the waiting set onto per-worker admissions for the
//! current step.
//!
//! Baselines ([`route_random`], [`route_round_robin`], [`route_p2c`],
//! [`route_jsq`]) place each waiting request as soon as some worker has a
//! free slot. The balancing policies ([`br0_dispatch`], [`brh_dispatch`])
//! work on the pooled waiting set once per step.

mod balance;
mod baseline;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterState, RequestId};
use crate::predictor::PredictorConfig;
use crate::scoring::ScoreParams;

pub use balance::{br0_dispatch, brh_dispatch};
pub use baseline::{route_jsq, route_p2c, route_random, route_round_robin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouterKind {
    Random,
    RoundRobin,
    P2c,
    Jsq,
    Br0,
    Brh,
}

impl RouterKind {
    pub const ALL: [RouterKind; 6] = [
        Self::Random,
        Self::RoundRobin,
        Self::P2c,
        Self::Jsq,
        Self::Br0,
        Self::Brh,
    ];

    pub fn is_baseline(self) -> bool {
        !matches!(self, Self::Br0 | Self::Brh)
    }
}

impl std::str::FromStr for RouterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "random" => Ok(Self::Random),
            "rr" | "round-robin" | "roundrobin" => Ok(Self::RoundRobin),
            "p2c" => Ok(Self::P2c),
            "jsq" => Ok(Self::Jsq),
            "br0" | "br-0" => Ok(Self::Br0),
            "brh" | "br-h" => Ok(Self::Brh),
            other => Err(Error::InvalidParameter(format!("unknown router {other:?}"))),
        }
    }
}

impl std::fmt::Display for RouterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::RoundRobin => "round-robin",
            Self::P2c => "p2c",
            Self::Jsq => "jsq",
            Self::Br0 => "br0",
            Self::Brh => "brh",
        })
    }
}

/// What power-of-two-choices compares between its two samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum P2cMetric {
    #[default]
    Load,
    Count,
}

/// Stage-2 solver. `Auto` uses two-probe for `Br0`, and for `Brh`
/// exhaustive enumeration up to a window of 4 and the bitset DP above.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetMethod {
    #[default]
    Auto,
    Exhaustive,
    Bitset,
    TwoProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RouterParams {
    pub kind: RouterKind,
    /// Free-slot threshold below which stage 2 takes over; `None` means `G`.
    pub s_greedy: Option<usize>,
    pub r_max: usize,
    pub score: ScoreParams,
    pub predictor: PredictorConfig,
    pub p2c_metric: P2cMetric,
    pub subset_method: SubsetMethod,
    pub rng_seed: u64,
}

impl Default for RouterParams {
    fn default() -> Self {
        Self {
            kind: RouterKind::Jsq,
            s_greedy: None,
            r_max: 4,
            score: ScoreParams::default(),
            predictor: PredictorConfig::default(),
            p2c_metric: P2cMetric::Load,
            subset_method: SubsetMethod::Auto,
            rng_seed: 0,
        }
    }
}

impl RouterParams {
    pub fn new(kind: RouterKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Sets the lookahead horizon on both the score and the predictor.
    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.score.horizon = horizon;
        self.predictor.horizon = horizon as u64;
        self
    }

    pub fn s_greedy(&self, workers: usize) -> usize {
        self.s_greedy.unwrap_or(workers)
    }

    /// Whether active requests must carry a cached `c_hat`.
    pub fn needs_predictions(&self) -> bool {
        self.kind == RouterKind::Brh && self.score.horizon > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_max == 0 || self.r_max > crate::subset::MAX_WINDOW {
            return Err(Error::InvalidParameter(format!(
                "r_max must lie in 1..={}, got {}",
                crate::subset::MAX_WINDOW,
                self.r_max
            )));
        }
        if self.kind == RouterKind::Brh {
            self.score.validate()?;
            if self.subset_method == SubsetMethod::TwoProbe {
                return Err(Error::InvalidParameter(
                    "two-probe selection is exact only for the single-step score".into(),
                ));
            }
            if self.needs_predictions() {
                self.predictor.validate()?;
                if self.predictor.horizon != self.score.horizon as u64 {
                    return Err(Error::InvalidParameter(format!(
                        "predictor horizon {} differs from score horizon {}",
                        self.predictor.horizon, self.score.horizon
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-worker admission lists for one step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dispatch {
    pub admissions: Vec<Vec<RequestId>>,
}

impl Dispatch {
    pub fn new(workers: usize) -> Self {
        Self {
            admissions: vec![Vec::new(); workers],
        }
    }

    pub fn admit(&mut self, worker: usize, id: RequestId) {
        self.admissions[worker].push(id);
    }

    pub fn total(&self) -> usize {
        self.admissions.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.admissions.iter().all(Vec::is_empty)
    }

    /// Capacity, disjointness and membership in the waiting set.
    pub fn validate(&self, state: &ClusterState) -> Result<()> {
        let fail = |reason: String| Error::InvalidDispatch {
            step: state.step,
            reason,
        };
        if self.admissions.len() != state.workers.len() {
            return Err(fail(format!(
                "{} admission lists for {} workers",
                self.admissions.len(),
                state.workers.len()
            )));
        }
        let waiting: std::collections::HashSet<RequestId> =
            state.waiting.iter().map(|w| w.id).collect();
        let mut seen = std::collections::HashSet::new();
        for (worker, ids) in state.workers.iter().zip(&self.admissions) {
            if worker.active.len() + ids.len() > worker.capacity {
                return Err(fail(format!(
                    "worker {} would hold {} requests with capacity {}",
                    worker.id,
                    worker.active.len() + ids.len(),
                    worker.capacity
                )));
            }
            for id in ids {
                if !waiting.contains(id) {
                    return Err(fail(format!("request {id} is not waiting")));
                }
                if !seen.insert(*id) {
                    return Err(fail(format!("request {id} admitted twice")));
                }
            }
        }
        Ok(())
    }
}

/// A policy instance with its per-run state (RNG, round-robin cursor).
#[derive(Debug, Clone)]
pub struct Router {
    params: RouterParams,
    rng: ChaCha8Rng,
    cursor: usize,
}

impl Router {
    pub fn new(params: RouterParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
            params,
            cursor: 0,
        })
    }

    pub fn params(&self) -> &RouterParams {
        &self.params
    }

    pub fn dispatch(&mut self, state: &ClusterState) -> Result<Dispatch> {
        match self.params.kind {
            RouterKind::Random => Ok(route_random(state, &mut self.rng)),
            RouterKind::RoundRobin => Ok(route_round_robin(state, &mut self.cursor)),
            RouterKind::P2c => route_p2c(state, &mut self.rng, self.params.p2c_metric),
            RouterKind::Jsq => Ok(route_jsq(state)),
            RouterKind::Br0 => br0_dispatch(state, &self.params),
            RouterKind::Brh => brh_dispatch(state, &self.params),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WaitingRequest;

    #[test]
    fn kinds_parse() {
        for kind in RouterKind::ALL {
            assert_eq!(kind.to_string().parse::<RouterKind>().unwrap(), kind);
        }
        assert_eq!("RR".parse::<RouterKind>().unwrap(), RouterKind::RoundRobin);
        assert!("fastest".parse::<RouterKind>().is_err());
    }

    #[test]
    fn params_validation() {
        let mut p = RouterParams::new(RouterKind::Brh).with_horizon(8);
        assert!(p.validate().is_ok());
        p.predictor.horizon = 4;
        assert!(p.validate().is_err());

        let p = RouterParams {
            subset_method: SubsetMethod::TwoProbe,
            ..RouterParams::new(RouterKind::Brh)
        };
        assert!(p.validate().is_err());

        let p = RouterParams {
            r_max: 0,
            ..RouterParams::new(RouterKind::Br0)
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn dispatch_validation() {
        let mut state = ClusterState::new(2, 1);
        state.enqueue(WaitingRequest {
            id: 1,
            arrival_step: 0,
            prefill_len: 5,
            prompt_key: None,
        });
        state.enqueue(WaitingRequest {
            id: 2,
            arrival_step: 0,
            prefill_len: 5,
            prompt_key: None,
        });

        let mut ok = Dispatch::new(2);
        ok.admit(0, 1);
        ok.admit(1, 2);
        assert!(ok.validate(&state).is_ok());

        let mut over = Dispatch::new(2);
        over.admit(0, 1);
        over.admit(0, 2);
        assert!(over.validate(&state).is_err());

        let mut twice = Dispatch::new(2);
        twice.admit(0, 1);
        twice.admit(1, 1);
        assert!(twice.validate(&state).is_err());

        let mut stranger = Dispatch::new(2);
        stranger.admit(0, 9);
        assert!(stranger.validate(&state).is_err());
    }
}
