//! Run configuration, loaded from TOML and overridden by CLI flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use trajfals_core::falsify::SamplerKind;
use trajfals_core::metrics::{MetricEntry, MetricKind, MetricSpec};
use trajfals_core::pipeline::EvalConfig;
use trajfals_core::predict::{ConstantVelocity, LaneFollow, Predictor};
use trajfals_core::{DEFAULT_K, HISTORY_STEPS, HORIZON_STEPS};

use crate::error::{Error, Result};
use crate::protocol::ExternalPredictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_ade: f64,
    pub min_fde: f64,
    /// Miss distance `d` for the miss indicator and miss rate.
    pub mr_distance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_ade: 0.1,
            min_fde: 1.0,
            mr_distance: 1.0,
        }
    }
}

/// Priority level per metric entry; lower is more important.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priorities {
    pub min_ade: u8,
    pub min_fde: u8,
    pub miss: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredictorSpec {
    /// `constant-velocity` or `lane-follow`.
    Builtin(String),
    External {
        command: Vec<String>,
    },
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec::Builtin("constant-velocity".into())
    }
}

pub const BUILTIN_PREDICTORS: &[&str] = &["constant-velocity", "lane-follow"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenarios: Vec<PathBuf>,
    pub sampler: SamplerKind,
    /// Samples per timepoint batch.
    pub n_samples: usize,
    pub timepoints: Vec<u32>,
    pub thresholds: Thresholds,
    pub priorities: Priorities,
    pub k: usize,
    pub horizon: usize,
    pub workers: usize,
    pub seed: u64,
    pub predictor: PredictorSpec,
    pub predictor_timeout_s: f64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenarios: Vec::new(),
            sampler: SamplerKind::Mab,
            n_samples: 30,
            timepoints: vec![20, 40, 60, 80],
            thresholds: Thresholds::default(),
            priorities: Priorities::default(),
            k: DEFAULT_K,
            horizon: HORIZON_STEPS,
            workers: 1,
            seed: 0,
            predictor: PredictorSpec::default(),
            predictor_timeout_s: 30.0,
            output: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.scenarios {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        if self.timepoints.is_empty() {
            return bad("at least one timepoint is required".into());
        }
        if let Some(t) = self
            .timepoints
            .iter()
            .find(|&&t| (t as usize) < HISTORY_STEPS)
        {
            return bad(format!("timepoint {t} is below {HISTORY_STEPS}"));
        }
        let th = &self.thresholds;
        for (name, v) in [
            ("min_ade", th.min_ade),
            ("min_fde", th.min_fde),
            ("mr_distance", th.mr_distance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("threshold {name} must be positive"));
            }
        }
        if self.k == 0 || self.horizon == 0 {
            return bad("k and horizon must be positive".into());
        }
        if !(self.predictor_timeout_s > 0.0) {
            return bad("predictor_timeout_s must be positive".into());
        }
        match &self.predictor {
            PredictorSpec::Builtin(name) if !BUILTIN_PREDICTORS.contains(&name.as_str()) => {
                bad(format!(
                    "unknown predictor `{name}` (expected one of {})",
                    BUILTIN_PREDICTORS.join(", ")
                ))
            }
            PredictorSpec::External { command } if command.is_empty() => {
                bad("external predictor command is empty".into())
            }
            _ => Ok(()),
        }
    }

    pub fn metric_spec(&self) -> MetricSpec {
        let th = &self.thresholds;
        let p = &self.priorities;
        MetricSpec {
            entries: vec![
                MetricEntry {
                    metric: MetricKind::MinAde,
                    threshold: th.min_ade,
                    level: p.min_ade,
                },
                MetricEntry {
                    metric: MetricKind::MinFde,
                    threshold: th.min_fde,
                    level: p.min_fde,
                },
                MetricEntry {
                    metric: MetricKind::MrMiss,
                    threshold: 1.0,
                    level: p.miss,
                },
            ],
            mr_distance: th.mr_distance,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            k: self.k,
            horizon: self.horizon,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.predictor_timeout_s)
    }

    /// A fresh predictor instance; external commands are launched here.
    pub fn make_predictor(&self) -> Result<Box<dyn Predictor>> {
        make_predictor(&self.predictor, self.timeout())
    }
}

pub fn make_predictor(spec: &PredictorSpec, timeout: Duration) -> Result<Box<dyn Predictor>> {
    match spec {
        PredictorSpec::Builtin(name) => match name.as_str() {
            "constant-velocity" => Ok(Box::new(ConstantVelocity)),
            "lane-follow" => Ok(Box::new(LaneFollow)),
            other => Err(Error::Config(format!("unknown predictor `{other}`"))),
        },
        PredictorSpec::External { command } => ExternalPredictor::launch(command, timeout)
            .map(|p| Box::new(p) as Box<dyn Predictor>)
            .map_err(|e| Error::PredictorLaunch(e.to_string())),
    }
}
