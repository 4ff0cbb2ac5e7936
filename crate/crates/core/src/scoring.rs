//! F-scores: the imbalance reduction obtained by admitting a batch of total
//! prefill `delta` to one worker.
//!
//! Both scores depend on the admitted subset only through `delta`, which is
//! what makes reachable-sum subset selection exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Tokens;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreParams {
    /// Reward weight on the safe regime.
    pub alpha: f64,
    /// Overflow penalty weight (replaces `G` in the single-step score).
    pub beta: f64,
    pub gamma: f64,
    pub horizon: usize,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 48.0,
            gamma: 0.9,
            horizon: 80,
        }
    }
}

impl ScoreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidDiscount(self.gamma));
        }
        Ok(())
    }

    /// The horizon-0 parameters under which the horizon score equals the
    /// single-step score for `workers` workers.
    pub fn single_step(workers: usize) -> Self {
        Self {
            alpha: 1.0,
            beta: workers as f64,
            gamma: 1.0,
            horizon: 0,
        }
    }
}

/// `(1, gamma, gamma^2, ..., gamma^H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountVector {
    gamma: f64,
    entries: Vec<f64>,
}

impl DiscountVector {
    pub fn new(horizon: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidDiscount(gamma));
        }
        let mut entries = Vec::with_capacity(horizon + 1);
        let mut d = 1.0;
        for _ in 0..=horizon {
            entries.push(d);
            d *= gamma;
        }
        Ok(Self { gamma, entries })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().sum()
    }
}

pub fn discount_vector(horizon: usize, gamma: f64) -> Result<DiscountVector> {
    DiscountVector::new(horizon, gamma)
}

/// `M - L_g`, the load worker `g` can absorb before it becomes the heaviest.
pub fn safe_margin_step(load: Tokens, max_load: Tokens) -> Tokens {
    max_load.saturating_sub(load)
}

/// Single-step score `delta - G * (delta - m)_+`.
pub fn fscore_step(delta: Tokens, margin: Tokens, workers: usize) -> f64 {
    let overflow = delta.saturating_sub(margin);
    delta as f64 - workers as f64 * overflow as f64
}

/// Horizon score `alpha * (1'd) * delta - beta * (delta * 1 - m)_+' d`.
pub fn fscore_horizon(
    delta: Tokens,
    margins: &[Tokens],
    discount: &DiscountVector,
    params: &ScoreParams,
) -> Result<f64> {
    if margins.len() != discount.as_slice().len() {
        return Err(Error::LengthMismatch {
            margins: margins.len(),
            discount: discount.as_slice().len(),
        });
    }
    Ok(HorizonScorer::new(discount.clone(), params).score(delta, margins))
}

/// Horizon score with the reward coefficient folded once per round.
#[derive(Debug, Clone)]
pub struct HorizonScorer {
    reward: f64,
    beta: f64,
    discount: DiscountVector,
}

impl HorizonScorer {
    pub fn new(discount: DiscountVector, params: &ScoreParams) -> Self {
        Self {
            reward: params.alpha * discount.sum(),
            beta: params.beta,
            discount,
        }
    }

    pub fn from_params(params: &ScoreParams) -> Result<Self> {
        params.validate()?;
        Ok(Self::new(
            DiscountVector::new(params.horizon, params.gamma)?,
            params,
        ))
    }

    pub fn horizon(&self) -> usize {
        self.discount.horizon()
    }

    /// `margins` must have `H + 1` entries.
    pub fn score(&self, delta: Tokens, margins: &[Tokens]) -> f64 {
        debug_assert_eq!(margins.len(), self.discount.as_slice().len());
        let penalty: f64 = margins
            .iter()
            .zip(self.discount.as_slice())
            .map(|(&m, &d)| d * delta.saturating_sub(m) as f64)
            .sum();
        self.reward * delta as f64 - self.beta * penalty
    }
}
