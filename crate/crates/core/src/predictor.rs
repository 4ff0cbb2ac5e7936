//! In-window contribution estimates.
//!
//! Lookahead routing needs one number per active request: `c_hat`, the
//! expected count of the next `H` steps during which the request is still
//! decoding, `E[min(r, H)]` for remaining length `r`. It decomposes into a
//! finish probability `p_fin = P(r <= H)` and a conditional mean
//! `mu_rem = E[r | r <= H]`:
//!
//! ```text
//! c_hat = (1 - p_fin) * H + p_fin * mu_rem        clipped to [0, H]
//! ```
//!
//! Realisations provided here:
//!
//! - oracle: `min(r, H)` from the ground-truth remaining length;
//! - empirical survival: both stages read off the sorted history of
//!   observed output lengths;
//! - exact match: the same formulas on a per-prompt-key history, falling
//!   back to the marginal history on a key miss.
//!
//! Cached estimates are aged by one per decode step and re-queried every
//! `refresh_period` steps, or immediately when aging would push them below
//! the floor of 1. A re-query is accepted only if `p_fin` clears the gate
//! threshold; otherwise the estimate resets to `H`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Request;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    Oracle,
    Survival,
    ExactMatch,
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "oracle" => Ok(Self::Oracle),
            "survival" => Ok(Self::Survival),
            "exact-match" | "exactmatch" => Ok(Self::ExactMatch),
            other => Err(Error::InvalidParameter(format!(
                "unknown predictor kind {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Oracle => "oracle",
            Self::Survival => "survival",
            Self::ExactMatch => "exact-match",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub horizon: u64,
    /// Steps between scheduled re-queries; `None` means `H / 2`.
    pub refresh_period: Option<u64>,
    pub gate_threshold: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Oracle,
            horizon: 80,
            refresh_period: None,
            gate_threshold: 0.5,
        }
    }
}

impl PredictorConfig {
    pub fn refresh_period(&self) -> u64 {
        self.refresh_period.unwrap_or(self.horizon / 2).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter(
                "predictor horizon must be at least 1".into(),
            ));
        }
        if self.refresh_period == Some(0) {
            return Err(Error::InvalidParameter(
                "refresh period must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gate_threshold) {
            return Err(Error::InvalidParameter(format!(
                "gate threshold must lie in [0, 1], got {}",
                self.gate_threshold
            )));
        }
        Ok(())
    }
}

/// Sorted output lengths with prefix sums, so both survival stages are two
/// binary searches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortedOutputs {
    values: Vec<u64>,
    prefix: Vec<u128>,
}

impl SortedOutputs {
    pub fn new(mut values: Vec<u64>) -> Self {
        values.sort_unstable();
        let mut prefix = Vec::with_capacity(values.len() + 1);
        prefix.push(0u128);
        let mut acc = 0u128;
        for &v in &values {
            acc += v as u128;
            prefix.push(acc);
        }
        Self { values, prefix }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    /// Number of outputs `<= t`.
    pub fn count_le(&self, t: u64) -> usize {
        self.values.partition_point(|&v| v <= t)
    }

    /// Empirical CDF with the weakly-less-than convention.
    pub fn cdf(&self, t: u64) -> f64 {
        self.count_le(t) as f64 / self.values.len() as f64
    }

    /// `(F(a + H) - F(a)) / (1 - F(a))`; 1 once `a` is past every output.
    pub fn p_fin(&self, age: u64, horizon: u64) -> f64 {
        let n = self.values.len();
        let survived = self.count_le(age);
        if survived == n {
            return 1.0;
        }
        let finishing = self.count_le(age.saturating_add(horizon)) - survived;
        finishing as f64 / (n - survived) as f64
    }

    /// Mean of `o - a` over outputs with `a < o <= a + H`; `H` when none.
    pub fn mu_rem(&self, age: u64, horizon: u64) -> f64 {
        let lo = self.count_le(age);
        let hi = self.count_le(age.saturating_add(horizon));
        if hi == lo {
            return horizon as f64;
        }
        let count = (hi - lo) as u128;
        let excess = self.prefix[hi] - self.prefix[lo] - count * age as u128;
        excess as f64 / count as f64
    }
}

/// Output-length history: the marginal sample plus per-prompt-key samples.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHistory {
    marginal: SortedOutputs,
    keyed: HashMap<u64, SortedOutputs>,
}

impl OutputHistory {
    /// "Training" is a sort of the observed lengths.
    pub fn fit<I>(samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u64, Option<u64>)>,
    {
        let mut all = Vec::new();
        let mut by_key: HashMap<u64, Vec<u64>> = HashMap::new();
        for (output, key) in samples {
            all.push(output);
            if let Some(key) = key {
                by_key.entry(key).or_default().push(output);
            }
        }
        if all.is_empty() {
            return Err(Error::EmptyHistory);
        }
        Ok(Self {
            marginal: SortedOutputs::new(all),
            keyed: by_key
                .into_iter()
                .map(|(k, v)| (k, SortedOutputs::new(v)))
                .collect(),
        })
    }

    pub fn from_outputs(outputs: impl IntoIterator<Item = u64>) -> Result<Self> {
        Self::fit(outputs.into_iter().map(|o| (o, None)))
    }

    pub fn from_requests(requests: &[Request]) -> Result<Self> {
        Self::fit(requests.iter().map(|r| (r.output_len, r.prompt_key)))
    }

    pub fn marginal(&self) -> &SortedOutputs {
        &self.marginal
    }

    pub fn keyed(&self, key: u64) -> Option<&SortedOutputs> {
        self.keyed.get(&key).filter(|h| !h.is_empty())
    }

    pub fn key_count(&self) -> usize {
        self.keyed.len()
    }

    /// The bucket an exact-match query for `key` reads from.
    pub fn bucket(&self, key: Option<u64>) -> &SortedOutputs {
        key.and_then(|k| self.keyed(k)).unwrap_or(&self.marginal)
    }
}

pub fn p_fin_survival(age: u64, horizon: u64, history: &OutputHistory) -> f64 {
    history.marginal.p_fin(age, horizon)
}

pub fn mu_rem_survival(age: u64, horizon: u64, history: &OutputHistory) -> f64 {
    history.marginal.mu_rem(age, horizon)
}

/// `(1 - p) * H + p * mu`, clipped to `[0, H]`.
pub fn composite_contribution(p_fin: f64, mu_rem: f64, horizon: u64) -> f64 {
    let h = horizon as f64;
    ((1.0 - p_fin) * h + p_fin * mu_rem).clamp(0.0, h)
}

pub fn oracle_contribution(remaining: u64, horizon: u64) -> f64 {
    remaining.min(horizon) as f64
}

pub fn exactmatch_contribution(
    key: Option<u64>,
    age: u64,
    horizon: u64,
    history: &OutputHistory,
) -> f64 {
    let bucket = history.bucket(key);
    composite_contribution(
        bucket.p_fin(age, horizon),
        bucket.mu_rem(age, horizon),
        horizon,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub p_fin: f64,
    pub mu_rem: f64,
}

/// A two-stage length estimator. Implementations see the request's age and
/// prompt key, never its true output length.
pub trait LengthEstimator {
    fn estimate(&self, age: u64, horizon: u64, key: Option<u64>) -> Estimate;
}

pub struct SurvivalEstimator<'a>(pub &'a OutputHistory);

impl LengthEstimator for SurvivalEstimator<'_> {
    fn estimate(&self, age: u64, horizon: u64, _key: Option<u64>) -> Estimate {
        Estimate {
            p_fin: self.0.marginal.p_fin(age, horizon),
            mu_rem: self.0.marginal.mu_rem(age, horizon),
        }
    }
}

pub struct ExactMatchEstimator<'a>(pub &'a OutputHistory);

impl LengthEstimator for ExactMatchEstimator<'_> {
    fn estimate(&self, age: u64, horizon: u64, key: Option<u64>) -> Estimate {
        let bucket = self.0.bucket(key);
        Estimate {
            p_fin: bucket.p_fin(age, horizon),
            mu_rem: bucket.mu_rem(age, horizon),
        }
    }
}

/// Where a re-query gets its answer.
pub enum Source<'a> {
    /// Ground-truth remaining decode steps, including the current one.
    Truth {
        remaining: u64,
    },
    Estimator(&'a dyn LengthEstimator),
}

/// Cached `c_hat` of one active request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionState {
    pub c_hat: f64,
    pub steps_since_refresh: u64,
    pub horizon: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefreshOutcome {
    /// No re-query; the estimate aged by one step.
    Decremented,
    /// Re-queried against ground truth.
    Oracle,
    GateOpen {
        p_fin: f64,
    },
    /// `p_fin` fell below the gate; the estimate reset to `H`.
    GateClosed {
        p_fin: f64,
    },
}

impl RefreshOutcome {
    pub fn is_requery(&self) -> bool {
        !matches!(self, Self::Decremented)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refresh {
    pub state: PredictionState,
    pub outcome: RefreshOutcome,
}

fn query(age: u64, key: Option<u64>, config: &PredictorConfig, source: &Source<'_>) -> Refresh {
    let h = config.horizon;
    let (c_hat, outcome) = match source {
        Source::Truth { remaining } => (
            oracle_contribution(*remaining, h).max(1.0),
            RefreshOutcome::Oracle,
        ),
        Source::Estimator(estimator) => {
            let est = estimator.estimate(age, h, key);
            if est.p_fin >= config.gate_threshold {
                (
                    composite_contribution(est.p_fin, est.mu_rem, h).max(1.0),
                    RefreshOutcome::GateOpen { p_fin: est.p_fin },
                )
            } else {
                (h as f64, RefreshOutcome::GateClosed { p_fin: est.p_fin })
            }
        }
    };
    Refresh {
        state: PredictionState {
            c_hat,
            steps_since_refresh: 0,
            horizon: h,
        },
        outcome,
    }
}

/// The estimate for a request at admission (or any fresh query).
pub fn initial_prediction(
    age: u64,
    key: Option<u64>,
    config: &PredictorConfig,
    source: Source<'_>,
) -> Refresh {
    query(age, key, config, &source)
}

/// Advances the cached estimate across one decode step. `age` is the age
/// after the step.
pub fn refresh_prediction(
    state: &PredictionState,
    age: u64,
    key: Option<u64>,
    config: &PredictorConfig,
    source: Source<'_>,
) -> Refresh {
    let since = state.steps_since_refresh + 1;
    let aged = state.c_hat - 1.0;
    if since >= config.refresh_period() || aged < 1.0 {
        return query(age, key, config, &source);
    }
    Refresh {
        state: PredictionState {
            c_hat: aged,
            steps_since_refresh: since,
            horizon: state.horizon,
        },
        outcome: RefreshOutcome::Decremented,
    }
}
