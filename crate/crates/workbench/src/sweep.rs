//! Parameter sweeps over independent simulation cells.
//!
//! `Cross` varies one axis at a time around the base configuration (cells
//! shared between axes run once); `Grid` takes the full product. Cells run
//! in parallel and the report keeps cell order.

use std::collections::HashSet;

use dpbalance_core::{OutputHistory, PredictorKind, Request, RouterKind, RunSummary, SimConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{generate_synthetic, SynthSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    #[default]
    Cross,
    Grid,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAxes {
    pub workers: Vec<usize>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub horizon: Vec<usize>,
    pub router: Vec<RouterKind>,
    pub predictor: Vec<PredictorKind>,
    pub seed: Vec<u64>,
}

impl SweepAxes {
    fn is_empty(&self) -> bool {
        self.workers.is_empty()
            && self.beta.is_empty()
            && self.gamma.is_empty()
            && self.horizon.is_empty()
            && self.router.is_empty()
            && self.predictor.is_empty()
            && self.seed.is_empty()
    }
}

/// Where each cell's trace comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    /// One trace for every cell; learned predictors fit on it in-sample
    /// unless a training trace is given.
    Fixed {
        trace: Vec<Request>,
        training: Option<Vec<Request>>,
    },
    /// Regenerated per cell with the cell's seed; learned predictors fit on
    /// an independent draw with seed `seed + 1`.
    Synthetic {
        spec: SynthSpec,
        /// Scale the arrival rate with `G` relative to the base `G`, so the
        /// per-worker offered load stays constant.
        scale_rate_with_workers: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub axes: SweepAxes,
    pub mode: SweepMode,
    pub workload: Workload,
    pub max_runs: usize,
}

impl SweepSpec {
    pub fn new(base: SimConfig, axes: SweepAxes, mode: SweepMode, workload: Workload) -> Self {
        Self {
            base,
            axes,
            mode,
            workload,
            max_runs: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub workers: usize,
    pub beta: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub router: RouterKind,
    pub predictor: PredictorKind,
    pub seed: u64,
}

impl SweepCell {
    fn of(config: &SimConfig) -> Self {
        Self {
            workers: config.workers,
            beta: config.router.score.beta,
            gamma: config.router.score.gamma,
            horizon: config.router.score.horizon,
            router: config.router.kind,
            predictor: config.router.predictor.kind,
            seed: config.seed,
        }
    }

    fn key(&self) -> (usize, u64, u64, usize, RouterKind, PredictorKind, u64) {
        (
            self.workers,
            self.beta.to_bits(),
            self.gamma.to_bits(),
            self.horizon,
            self.router,
            self.predictor,
            self.seed,
        )
    }

    pub fn apply(&self, base: &SimConfig) -> SimConfig {
        let mut config = base.clone();
        config.workers = self.workers;
        config.router.kind = self.router;
        config.router.score.beta = self.beta;
        config.router.score.gamma = self.gamma;
        config.router = config.router.with_horizon(self.horizon);
        config.router.predictor.kind = self.predictor;
        config.seed = self.seed;
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    /// Arrival rate used for the cell, for synthetic workloads.
    pub rate: Option<f64>,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

pub fn expand_cells(spec: &SweepSpec) -> Result<Vec<SweepCell>> {
    if spec.axes.is_empty() {
        return Err(Error::Config("a sweep needs at least one axis".into()));
    }
    let center = SweepCell::of(&spec.base);
    let axes = &spec.axes;
    let mut cells = Vec::new();
    match spec.mode {
        SweepMode::Cross => {
            let mut vary = |f: &dyn Fn(&mut SweepCell, usize), n: usize| {
                for i in 0..n {
                    let mut cell = center.clone();
                    f(&mut cell, i);
                    cells.push(cell);
                }
            };
            vary(&|c, i| c.workers = axes.workers[i], axes.workers.len());
            vary(&|c, i| c.beta = axes.beta[i], axes.beta.len());
            vary(&|c, i| c.gamma = axes.gamma[i], axes.gamma.len());
            vary(&|c, i| c.horizon = axes.horizon[i], axes.horizon.len());
            vary(&|c, i| c.router = axes.router[i], axes.router.len());
            vary(
                &|c, i| c.predictor = axes.predictor[i],
                axes.predictor.len(),
            );
            vary(&|c, i| c.seed = axes.seed[i], axes.seed.len());
        }
        SweepMode::Grid => {
            fn or<T: Clone>(values: &[T], fallback: T) -> Vec<T> {
                if values.is_empty() {
                    vec![fallback]
                } else {
                    values.to_vec()
                }
            }
            for &workers in &or(&axes.workers, center.workers) {
                for &beta in &or(&axes.beta, center.beta) {
                    for &gamma in &or(&axes.gamma, center.gamma) {
                        for &horizon in &or(&axes.horizon, center.horizon) {
                            for &router in &or(&axes.router, center.router) {
                                for &predictor in &or(&axes.predictor, center.predictor) {
                                    for &seed in &or(&axes.seed, center.seed) {
                                        cells.push(SweepCell {
                                            workers,
                                            beta,
                                            gamma,
                                            horizon,
                                            router,
                                            predictor,
                                            seed,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut seen = HashSet::new();
    cells.retain(|c| seen.insert(c.key()));
    if cells.len() > spec.max_runs {
        return Err(Error::Config(format!(
            "sweep expands to {} runs, above the limit of {}",
            cells.len(),
            spec.max_runs
        )));
    }
    Ok(cells)
}

fn run_cell(spec: &SweepSpec, cell: &SweepCell) -> Result<(Option<f64>, RunSummary)> {
    let config = cell.apply(&spec.base);
    let learned =
        config.router.needs_predictions() && config.router.predictor.kind != PredictorKind::Oracle;
    let (rate, output) = match &spec.workload {
        Workload::Fixed { trace, training } => {
            let history = if learned {
                Some(OutputHistory::from_requests(
                    training.as_deref().unwrap_or(trace),
                )?)
            } else {
                None
            };
            (
                None,
                dpbalance_core::run_trace(trace, &config, history.as_ref())?,
            )
        }
        Workload::Synthetic {
            spec: synth,
            scale_rate_with_workers,
        } => {
            let mut synth = synth.clone();
            if *scale_rate_with_workers {
                synth.rate *= cell.workers as f64 / spec.base.workers as f64;
            }
            synth.seed = cell.seed;
            let trace = generate_synthetic(&synth)?;
            let history = if learned {
                synth.seed = cell.seed.wrapping_add(1);
                Some(OutputHistory::from_requests(&generate_synthetic(&synth)?)?)
            } else {
                None
            };
            (
                Some(synth.rate),
                dpbalance_core::run_trace(&trace, &config, history.as_ref())?,
            )
        }
    };
    Ok((rate, output.summary))
}

/// Runs every cell; a failing cell is reported in its row and does not stop
/// the others.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let cells = expand_cells(spec)?;
    Ok(cells
        .into_par_iter()
        .map(|cell| match run_cell(spec, &cell) {
            Ok((rate, mut summary)) => {
                summary.completion_steps.clear();
                SweepRow {
                    cell,
                    rate,
                    summary: Some(summary),
                    error: None,
                }
            }
            Err(e) => SweepRow {
                cell,
                rate: None,
                summary: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use dpbalance_core::RouterParams;

    fn base() -> SimConfig {
        let mut config = SimConfig {
            workers: 4,
            capacity: 4,
            router: RouterParams::new(RouterKind::Brh).with_horizon(8),
            ..SimConfig::default()
        };
        config.router.score.beta = 48.0;
        config.router.score.gamma = 0.9;
        config
    }

    fn small() -> Workload {
        Workload::Synthetic {
            spec: SynthSpec {
                count: 200,
                ..SynthSpec::heavy_tailed().with_load(0.9, 4, 4)
            },
            scale_rate_with_workers: true,
        }
    }

    #[test]
    fn cross_shares_the_center() {
        let axes = SweepAxes {
            beta: vec![1.0, 24.0, 48.0, 96.0],
            gamma: vec![0.5, 0.7, 0.9, 1.0],
            ..SweepAxes::default()
        };
        let spec = SweepSpec::new(base(), axes, SweepMode::Cross, small());
        let cells = expand_cells(&spec).unwrap();
        assert_eq!(cells.len(), 7);
        let grid = SweepSpec {
            mode: SweepMode::Grid,
            ..spec
        };
        assert_eq!(expand_cells(&grid).unwrap().len(), 16);
    }

    #[test]
    fn empty_axes_rejected() {
        let spec = SweepSpec::new(base(), SweepAxes::default(), SweepMode::Grid, small());
        assert!(expand_cells(&spec).is_err());
    }

    #[test]
    fn run_limit() {
        let axes = SweepAxes {
            seed: (0..20).collect(),
            ..SweepAxes::default()
        };
        let mut spec = SweepSpec::new(base(), axes, SweepMode::Grid, small());
        spec.max_runs = 10;
        assert!(expand_cells(&spec).is_err());
    }

    #[test]
    fn single_cell_matches_direct_run() {
        let axes = SweepAxes {
            seed: vec![3],
            ..SweepAxes::default()
        };
        let spec = SweepSpec::new(base(), axes, SweepMode::Cross, small());
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 1);

        let Workload::Synthetic { spec: synth, .. } = small() else {
            unreachable!()
        };
        let trace = generate_synthetic(&SynthSpec { seed: 3, ..synth }).unwrap();
        let mut config = base();
        config.seed = 3;
        let mut direct = dpbalance_core::run_trace(&trace, &config, None)
            .unwrap()
            .summary;
        direct.completion_steps.clear();
        assert_eq!(rows[0].summary.as_ref(), Some(&direct));
    }

    #[test]
    fn worker_axis_keeps_per_worker_rate() {
        let axes = SweepAxes {
            workers: vec![2, 4, 8],
            ..SweepAxes::default()
        };
        let spec = SweepSpec::new(base(), axes, SweepMode::Cross, small());
        let rows = run_sweep(&spec).unwrap();
        let per_worker: Vec<f64> = rows
            .iter()
            .map(|r| r.rate.unwrap() / r.cell.workers as f64)
            .collect();
        assert!(per_worker
            .iter()
            .all(|&p| (p - per_worker[0]).abs() < 1e-12));
    }

    #[test]
    fn failing_cell_is_reported() {
        let axes = SweepAxes {
            // P2C needs two workers.
            workers: vec![1, 2],
            router: vec![RouterKind::P2c],
            ..SweepAxes::default()
        };
        let spec = SweepSpec::new(base(), axes, SweepMode::Grid, small());
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].error.is_some());
        assert!(rows[1].summary.is_some());
    }
}
