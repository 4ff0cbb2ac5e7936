//! TOML run and sweep configuration files.
//!
//! ```toml
//! trace = "trace.jsonl"
//!
//! [sim]
//! workers = 8
//! capacity = 16
//!
//! [sim.router]
//! kind = "brh"
//! score = { beta = 48.0, gamma = 0.9, horizon = 80 }
//! predictor = { kind = "oracle", horizon = 80 }
//! ```

use std::path::{Path, PathBuf};

use dpbalance_core::{Request, SimConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sweep::{SweepAxes, SweepMode, SweepSpec, Workload};
use crate::synth::SynthSpec;
use crate::trace::{load_trace, LoadOptions, TraceFormat};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub trace: Option<PathBuf>,
    pub format: TraceFormat,
    /// Trace the learned predictors fit on; the run trace itself if absent.
    pub train_trace: Option<PathBuf>,
    pub load: LoadOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub base: SimConfig,
    pub axes: SweepAxes,
    pub mode: SweepMode,
    /// Synthetic workload; used when `trace` is absent.
    pub synthetic: Option<SynthSpec>,
    pub scale_rate_with_workers: bool,
    pub trace: Option<PathBuf>,
    pub format: TraceFormat,
    pub train_trace: Option<PathBuf>,
    pub load: LoadOptions,
    pub max_runs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            base: SimConfig::default(),
            axes: SweepAxes::default(),
            mode: SweepMode::Cross,
            synthetic: None,
            scale_rate_with_workers: true,
            trace: None,
            format: TraceFormat::Native,
            train_trace: None,
            load: LoadOptions::default(),
            max_runs: 10_000,
        }
    }
}

impl SweepConfig {
    pub fn into_spec(self) -> Result<SweepSpec> {
        let workload = match (&self.trace, self.synthetic) {
            (Some(path), None) => Workload::Fixed {
                trace: load_trace(path, self.format, &self.load)?,
                training: self
                    .train_trace
                    .as_deref()
                    .map(|p| load_trace(p, self.format, &self.load))
                    .transpose()?,
            },
            (None, Some(spec)) => Workload::Synthetic {
                spec,
                scale_rate_with_workers: self.scale_rate_with_workers,
            },
            (None, None) => Workload::Synthetic {
                spec: SynthSpec::heavy_tailed(),
                scale_rate_with_workers: self.scale_rate_with_workers,
            },
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "a sweep takes either a trace or a synthetic workload, not both".into(),
                ))
            }
        };
        let mut spec = SweepSpec::new(self.base, self.axes, self.mode, workload);
        spec.max_runs = self.max_runs;
        Ok(spec)
    }
}

pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_toml(&text)
}

/// Reads the run trace and, when configured, the training trace.
pub fn load_run_traces(config: &RunConfig) -> Result<(Vec<Request>, Option<Vec<Request>>)> {
    let path = config
        .trace
        .as_deref()
        .ok_or_else(|| Error::Config("no trace given".into()))?;
    let trace = load_trace(path, config.format, &config.load)?;
    let training = config
        .train_trace
        .as_deref()
        .map(|p| load_trace(p, config.format, &config.load))
        .transpose()?;
    Ok((trace, training))
}

#[cfg(test)]
mod tests {
    use super::*;
    use dpbalance_core::{PredictorKind, RouterKind};

    #[test]
    fn run_config_from_toml() {
        let config: RunConfig = parse_toml(
            r#"
trace = "t.jsonl"
format = "azure"

[load]
ms_per_step = 30.0
filter_output_gt = 1000

[sim]
workers = 4
capacity = 8
seed = 7

[sim.router]
kind = "brh"
r_max = 6
score = { beta = 24.0, gamma = 0.7, horizon = 40 }
predictor = { kind = "survival", horizon = 40 }
"#,
        )
        .unwrap();
        assert_eq!(config.format, TraceFormat::Azure);
        assert_eq!(config.load.filter_output_gt, Some(1000));
        assert_eq!(config.sim.workers, 4);
        assert_eq!(config.sim.router.kind, RouterKind::Brh);
        assert_eq!(config.sim.router.score.alpha, 1.0);
        assert_eq!(config.sim.router.score.horizon, 40);
        assert_eq!(config.sim.router.predictor.kind, PredictorKind::Survival);
        assert!(config.sim.validate().is_ok());
    }

    #[test]
    fn empty_file_is_default() {
        let config: RunConfig = parse_toml("").unwrap();
        assert_eq!(config, RunConfig::default());
        assert!(parse_toml::<RunConfig>("[sim]\nworkers = \"eight\"").is_err());
    }

    #[test]
    fn sweep_config_cross() {
        let config: SweepConfig = parse_toml(
            r#"
mode = "cross"
[axes]
beta = [1.0, 24.0, 48.0, 96.0]
gamma = [0.5, 0.7, 0.9, 1.0]
[synthetic]
count = 100
rate = 0.2
"#,
        )
        .unwrap();
        let spec = config.into_spec().unwrap();
        assert_eq!(spec.axes.beta.len(), 4);
        assert!(matches!(spec.workload, Workload::Synthetic { .. }));
    }
}
