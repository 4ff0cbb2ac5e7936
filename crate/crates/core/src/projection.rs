//! Projected per-worker load over the next `H` steps.
//!
//! Offset 0 is the exact instantaneous load. At offset `h >= 1` an active
//! request contributes `s + a + h - 1` while `h <= c_hat` and nothing after,
//! so each request "ages out" of the window after its predicted in-window
//! contribution. Requests admitted during the current round are modelled as
//! a constant extra `s` at every offset.

use crate::error::{Error, Result};
use crate::model::{ActiveEntry, Tokens, WorkerState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HorizonProjection {
    horizon: usize,
    loads: Vec<Vec<Tokens>>,
    envelope: Vec<Tokens>,
    margins: Vec<Vec<Tokens>>,
}

impl HorizonProjection {
    /// Builds envelope and margins from raw per-worker rows of length `H + 1`.
    pub fn from_loads(loads: Vec<Vec<Tokens>>, horizon: usize) -> Self {
        let mut envelope = vec![0; horizon + 1];
        for row in &loads {
            debug_assert_eq!(row.len(), horizon + 1);
            for (m, &l) in envelope.iter_mut().zip(row) {
                *m = (*m).max(l);
            }
        }
        let margins = loads
            .iter()
            .map(|row| row.iter().zip(&envelope).map(|(&l, &m)| m - l).collect())
            .collect();
        Self {
            horizon,
            loads,
            envelope,
            margins,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn workers(&self) -> usize {
        self.loads.len()
    }

    pub fn loads(&self, worker: usize) -> &[Tokens] {
        &self.loads[worker]
    }

    pub fn envelope(&self) -> &[Tokens] {
        &self.envelope
    }

    pub fn margins(&self, worker: usize) -> &[Tokens] {
        &self.margins[worker]
    }

    pub fn min_margin(&self, worker: usize) -> Tokens {
        self.margins[worker].iter().copied().min().unwrap_or(0)
    }

    /// Adds `delta` to every offset of `worker` and restores the envelope and
    /// margin invariants. Only offsets where `worker` overtakes the envelope
    /// touch other workers' margins.
    pub fn apply_admission(&mut self, worker: usize, delta: Tokens) {
        if delta == 0 {
            return;
        }
        for h in 0..=self.horizon {
            let load = self.loads[worker][h] + delta;
            self.loads[worker][h] = load;
            if load > self.envelope[h] {
                let rise = load - self.envelope[h];
                self.envelope[h] = load;
                for (g, margins) in self.margins.iter_mut().enumerate() {
                    if g != worker {
                        margins[h] += rise;
                    }
                }
                self.margins[worker][h] = 0;
            } else {
                self.margins[worker][h] -= delta;
            }
        }
    }
}

/// Number of offsets `h >= 1` at which the entry still contributes.
fn window_steps(entry: &ActiveEntry, horizon: usize) -> Result<usize> {
    let prediction = entry
        .prediction
        .as_ref()
        .ok_or(Error::MissingPrediction(entry.request_id))?;
    let c = prediction.c_hat.max(0.0).floor();
    Ok((c as usize).min(horizon))
}

/// Direct evaluation of every request at every offset.
pub fn project_naive(workers: &[WorkerState], horizon: usize) -> Result<HorizonProjection> {
    let mut loads = Vec::with_capacity(workers.len());
    for worker in workers {
        let mut row = vec![0; horizon + 1];
        row[0] = worker.load();
        if horizon > 0 {
            for entry in &worker.active {
                let steps = window_steps(entry, horizon)?;
                for (h, slot) in row.iter_mut().enumerate().skip(1) {
                    if h <= steps {
                        *slot += entry.prefill_len + entry.age + h as Tokens - 1;
                    }
                }
            }
        }
        loads.push(row);
    }
    Ok(HorizonProjection::from_loads(loads, horizon))
}

/// Same result as [`project_naive`] in `O(G * (B + H))`: bucket entries by
/// their window length and sweep suffix aggregates downwards, using
/// `L(h) = sum_{n_i >= h} (s_i + a_i - 1) + h * #{n_i >= h}`.
pub fn project_fast(workers: &[WorkerState], horizon: usize) -> Result<HorizonProjection> {
    let mut loads = Vec::with_capacity(workers.len());
    let mut count = vec![0u64; horizon + 1];
    let mut base = vec![0u64; horizon + 1];
    for worker in workers {
        let mut row = vec![0; horizon + 1];
        row[0] = worker.load();
        if horizon > 0 {
            count.iter_mut().for_each(|c| *c = 0);
            base.iter_mut().for_each(|b| *b = 0);
            for entry in &worker.active {
                let steps = window_steps(entry, horizon)?;
                count[steps] += 1;
                base[steps] += entry.prefill_len + entry.age - 1;
            }
            let (mut alive, mut offset_base) = (0u64, 0u64);
            for h in (1..=horizon).rev() {
                alive += count[h];
                offset_base += base[h];
                row[h] = offset_base + h as Tokens * alive;
            }
        }
        loads.push(row);
    }
    Ok(HorizonProjection::from_loads(loads, horizon))
}
