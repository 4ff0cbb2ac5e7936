//! Seeded synthetic workloads.
//!
//! Arrivals are Poisson at `rate` requests per step, optionally modulated
//! by a two-phase on/off process (`burst`) that keeps the mean rate. Prompt
//! and output lengths come from [`LengthDist`]. A fraction `key_repeat` of requests
//! reuse a prompt from a finite key pool: they share that key's prompt
//! length and get its base output length with a mean-preserving jitter,
//! which is the recurrence an exact-match predictor can exploit.

use std::collections::HashMap;

use dpbalance_core::Request;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LengthDist {
    Fixed {
        value: u64,
    },
    /// Rounded lognormal with the given mean, floored at 1.
    Lognormal {
        mean: f64,
        sigma: f64,
    },
    /// `offset` plus a rounded lognormal, clamped to `cap`.
    Truncated {
        offset: u64,
        mean: f64,
        sigma: f64,
        cap: u64,
    },
}

impl LengthDist {
    fn validate(&self, what: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{what} distribution: {msg}")));
        match *self {
            Self::Fixed { value } if value == 0 => bad("value must be at least 1".into()),
            Self::Lognormal { mean, sigma } | Self::Truncated { mean, sigma, .. }
                if !(mean > 0.0 && mean.is_finite() && sigma > 0.0 && sigma.is_finite()) =>
            {
                bad(format!(
                    "need mean > 0 and sigma > 0, got {mean} and {sigma}"
                ))
            }
            Self::Truncated { offset, cap, .. } if cap <= offset || cap == 0 => {
                bad(format!("cap {cap} must exceed offset {offset}"))
            }
            _ => Ok(()),
        }
    }

    fn lognormal(mean: f64, sigma: f64) -> LogNormal<f64> {
        LogNormal::new(mean.ln() - sigma * sigma / 2.0, sigma).expect("validated parameters")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            Self::Fixed { value } => value,
            Self::Lognormal { mean, sigma } => {
                (Self::lognormal(mean, sigma).sample(rng).round() as u64).max(1)
            }
            Self::Truncated {
                offset,
                mean,
                sigma,
                cap,
            } => {
                let x = Self::lognormal(mean, sigma).sample(rng).round() as u64;
                offset.saturating_add(x).min(cap).max(1)
            }
        }
    }

    /// Mean of the continuous distribution before rounding.
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Fixed { value } => value as f64,
            Self::Lognormal { mean, .. } => mean,
            Self::Truncated {
                offset,
                mean,
                sigma,
                cap,
            } => {
                // E[min(X, c)] for lognormal X with E[X] = mean.
                let c = (cap - offset) as f64;
                let mu = mean.ln() - sigma * sigma / 2.0;
                let z = (c.ln() - mu) / sigma;
                let phi = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
                offset as f64 + mean * phi(z - sigma) + c * (1.0 - phi(z))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub count: usize,
    /// Mean arrivals per step over the whole cluster; 0 puts every request
    /// at step 0.
    pub rate: f64,
    pub prompt: LengthDist,
    pub output: LengthDist,
    pub key_pool: usize,
    pub key_repeat: f64,
    /// Relative half-width of the uniform jitter on a key's output length.
    pub key_jitter: f64,
    pub burst: Option<Burst>,
    pub seed: u64,
}

/// Alternating high and low phases with rates `rate * (1 +- amplitude)`
/// and exponential durations of mean `period` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub amplitude: f64,
    pub period: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::heavy_tailed()
    }
}

impl SynthSpec {
    /// Lognormal prompts and heavy-tailed lognormal outputs (mean prompt
    /// about 3,200 and mean output about 1,185 tokens) with bursty arrivals,
    /// at offered load 1.0 on 8 workers of 16 slots.
    pub fn heavy_tailed() -> Self {
        Self {
            count: 8_000,
            rate: 0.0,
            prompt: LengthDist::Truncated {
                offset: 16,
                mean: 3_200.0,
                sigma: 0.8,
                cap: 32_768,
            },
            output: LengthDist::Truncated {
                offset: 1,
                mean: 1_185.0,
                sigma: 1.0,
                cap: 8_192,
            },
            key_pool: 2_000,
            key_repeat: 0.3,
            key_jitter: 0.1,
            burst: Some(Burst {
                amplitude: 0.5,
                period: 3_000.0,
            }),
            seed: 0,
        }
        .with_load(1.0, 8, 16)
    }

    /// Long prompts and outputs just above a 1000-token floor, bounded by a
    /// cap, in the shape of a conversation trace filtered to long outputs.
    /// Same arrival process and load as [`SynthSpec::heavy_tailed`].
    pub fn azure_like() -> Self {
        Self {
            count: 8_000,
            rate: 0.0,
            prompt: LengthDist::Truncated {
                offset: 1,
                mean: 4_650.0,
                sigma: 0.9,
                cap: 32_768,
            },
            output: LengthDist::Truncated {
                offset: 1_001,
                mean: 50.0,
                sigma: 1.0,
                cap: 2_048,
            },
            key_pool: 0,
            key_repeat: 0.0,
            key_jitter: 0.0,
            burst: Some(Burst {
                amplitude: 0.5,
                period: 3_000.0,
            }),
            seed: 0,
        }
        .with_load(1.0, 8, 16)
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "heavy-tailed" | "heavy" => Ok(Self::heavy_tailed()),
            "azure-like" | "azure" => Ok(Self::azure_like()),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }

    /// Arrival rate giving offered load `load` (busy slots over all slots)
    /// on `workers` workers with `capacity` slots each.
    pub fn rate_for_load(&self, load: f64, workers: usize, capacity: usize) -> f64 {
        load * (workers * capacity) as f64 / self.output.mean()
    }

    pub fn with_load(mut self, load: f64, workers: usize, capacity: usize) -> Self {
        self.rate = self.rate_for_load(load, workers, capacity);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0) || !self.rate.is_finite() {
            return Err(Error::Config(format!(
                "rate must be non-negative, got {}",
                self.rate
            )));
        }
        if !(0.0..=1.0).contains(&self.key_repeat) {
            return Err(Error::Config(format!(
                "key_repeat must lie in [0, 1], got {}",
                self.key_repeat
            )));
        }
        if self.key_repeat > 0.0 && self.key_pool == 0 {
            return Err(Error::Config(
                "key_repeat > 0 needs a non-empty key pool".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.key_jitter) {
            return Err(Error::Config(format!(
                "key_jitter must lie in [0, 1), got {}",
                self.key_jitter
            )));
        }
        if let Some(b) = self.burst {
            if !(0.0..=1.0).contains(&b.amplitude) || !(b.period > 0.0 && b.period.is_finite()) {
                return Err(Error::Config(format!(
                    "burst needs amplitude in [0, 1] and a positive period, got {} and {}",
                    b.amplitude, b.period
                )));
            }
        }
        self.prompt.validate("prompt")?;
        self.output.validate("output")
    }
}

/// Arrival clock: Poisson, or phase-modulated Poisson sampled by thinning.
struct Arrivals {
    rate: f64,
    burst: Option<(Burst, Exp<f64>)>,
    clock: f64,
    phase_end: f64,
    high: bool,
}

impl Arrivals {
    fn new<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Self {
        let burst = spec
            .burst
            .filter(|b| b.amplitude > 0.0)
            .map(|b| (b, Exp::new(1.0 / b.period).expect("validated period")));
        let phase_end = burst.as_ref().map_or(f64::INFINITY, |(_, d)| d.sample(rng));
        Self {
            rate: spec.rate,
            burst,
            clock: 0.0,
            phase_end,
            high: true,
        }
    }

    fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if self.rate == 0.0 {
            return 0.0;
        }
        let Some((burst, durations)) = self.burst else {
            self.clock += Exp::new(self.rate).expect("validated rate").sample(rng);
            return self.clock;
        };
        let peak = self.rate * (1.0 + burst.amplitude);
        let gaps = Exp::new(peak).expect("validated rate");
        loop {
            self.clock += gaps.sample(rng);
            while self.clock >= self.phase_end {
                self.high = !self.high;
                self.phase_end += durations.sample(rng);
            }
            let current = if self.high {
                peak
            } else {
                self.rate * (1.0 - burst.amplitude)
            };
            if rng.random::<f64>() * peak < current {
                return self.clock;
            }
        }
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<Request>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut arrivals = Arrivals::new(spec, &mut rng);
    let mut bases: HashMap<u64, (u64, u64)> = HashMap::new();
    let mut trace = Vec::with_capacity(spec.count);
    for id in 0..spec.count as u64 {
        let clock = arrivals.next(&mut rng);
        let repeat = spec.key_repeat > 0.0 && rng.random::<f64>() < spec.key_repeat;
        let (prompt, output, key) = if repeat {
            let key = rng.random_range(0..spec.key_pool as u64);
            let (prompt, base) = match bases.get(&key) {
                Some(&b) => b,
                None => {
                    let b = (spec.prompt.sample(&mut rng), spec.output.sample(&mut rng));
                    bases.insert(key, b);
                    b
                }
            };
            let factor = if spec.key_jitter > 0.0 {
                1.0 + rng.random_range(-spec.key_jitter..=spec.key_jitter)
            } else {
                1.0
            };
            let output = ((base as f64 * factor).round() as u64).max(1);
            (prompt, output, Some(key))
        } else {
            (
                spec.prompt.sample(&mut rng),
                spec.output.sample(&mut rng),
                None,
            )
        };
        trace.push(Request {
            id,
            arrival_step: clock.floor() as u64,
            prefill_len: prompt,
            output_len: output,
            prompt_key: key,
        });
    }
    Ok(trace)
}
