//! Per-sample evaluation: simulate, window, predict, score.

use alloc::format;
use alloc::string::String;

use thiserror::Error;

use crate::falsify::Evaluation;
use crate::lang::ConcreteScenario;
use crate::metrics::{min_ade, min_fde, MetricError, MetricSpec};
use crate::predict::{predict, PredictError, PredictionRequest, PredictionSet, Predictor};
use crate::sim::{simulate, split_trace_with, SimError, Trace, Window, WindowError};
use crate::{DEFAULT_K, HORIZON_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    pub k: usize,
    pub horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: DEFAULT_K,
            horizon: HORIZON_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("windowing: {0}")]
    Window(#[from] WindowError),
    #[error("prediction: {0}")]
    Predict(#[from] PredictError),
    #[error("metrics: {0}")]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub trace: Trace,
    pub window: Window,
    pub request: PredictionRequest,
    pub predictions: PredictionSet,
    pub evaluation: Evaluation,
}

/// Stable request id for a concrete scenario.
pub fn scenario_id(scenario: &ConcreteScenario) -> String {
    format!("{}-{:016x}", scenario.program_id, scenario.seed)
}

/// Runs one concrete scenario through `model` and scores it against `spec`.
pub fn evaluate(
    scenario: &ConcreteScenario,
    model: &mut dyn Predictor,
    spec: &MetricSpec,
    cfg: EvalConfig,
) -> Result<SampleOutput, EvalError> {
    let tp = scenario.timepoint as usize;
    let trace = simulate(scenario, tp + cfg.horizon.max(HORIZON_STEPS))?;
    let window = split_trace_with(&trace, tp, scenario.target, cfg.horizon)?;
    let request = PredictionRequest::from_window(
        &scenario_id(scenario),
        &trace.agents,
        &window,
        scenario.network.clone(),
        scenario.target_name(),
        cfg.horizon,
        cfg.k,
    );
    model.peek_future(&window.future);
    let predictions = predict(model, &request)?;
    let ade = min_ade(&predictions.candidates, &window.future)?;
    let fde = min_fde(&predictions.candidates, &window.future)?;
    let evaluation = Evaluation::from_metrics(spec, ade, fde)?;
    Ok(SampleOutput {
        trace,
        window,
        request,
        predictions,
        evaluation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{concretize, parse, Concretized};
    use crate::predict::{AlwaysMiss, ConstantVelocity, Oracle};
    use alloc::collections::BTreeMap;

    const STRAIGHT: &str = r#"
map straight(lanes = 1, length = 200)
param timepoint = Choice(20, 40)
ego car on "lane0" at 10 speed 4
behavior car: FollowLane(target_speed = 4)
predict car at timepoint
"#;

    fn scenario(tp: f64) -> ConcreteScenario {
        let p = parse(STRAIGHT).unwrap();
        let a: BTreeMap<String, f64> = [("timepoint".into(), tp)].into_iter().collect();
        match concretize(&p, &a, 3).unwrap() {
            Concretized::Accepted(s) => s,
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn constant_speed_is_predicted_exactly() {
        let spec = MetricSpec::default();
        let out = evaluate(
            &scenario(40.0),
            &mut ConstantVelocity,
            &spec,
            EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(out.trace.len(), 55);
        assert_eq!(out.window.future.len(), 15);
        assert!(out.evaluation.min_fde < 1e-9);
        assert!(!out.evaluation.rho.is_counterexample);
    }

    #[test]
    fn oracle_and_always_miss() {
        let spec = MetricSpec::default();
        let s = scenario(20.0);
        let o = evaluate(&s, &mut Oracle::default(), &spec, EvalConfig::default()).unwrap();
        assert_eq!(o.evaluation.min_ade, 0.0);
        let m = evaluate(&s, &mut AlwaysMiss::default(), &spec, EvalConfig::default()).unwrap();
        assert!((m.evaluation.min_fde - AlwaysMiss::MISS_OFFSET).abs() < 1e-12);
        assert!(m.evaluation.rho.is_counterexample);
    }

    #[test]
    fn scenario_ids_are_stable() {
        assert_eq!(scenario_id(&scenario(20.0)), scenario_id(&scenario(20.0)));
    }
}
