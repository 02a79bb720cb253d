//! Scenario to error table through the public API.

use proptest::prelude::*;
use trajfals_core::falsify::{falsify, FalsifyConfig, SamplerKind};
use trajfals_core::lang::parse;
use trajfals_core::metrics::MetricSpec;
use trajfals_core::pipeline::{evaluate, EvalConfig};
use trajfals_core::predict::{ConstantVelocity, LaneFollow, Predictor};

const LEFT_TURN: &str = r#"
map intersection(arms = 4)
param ego_speed = Range(4, 7)
param adv_speed = Range(4, 6)
param adv_gap = Range(10, 30)
param timepoint = Choice(20, 40, 60)
ego car on "south_in" at -20 speed ego_speed
agent adv on "north_in" at -adv_gap speed adv_speed
behavior car: BrakeOnCollisionRisk(2)
behavior car: TurnAtIntersection(straight, ego_speed)
behavior car: FollowLane(ego_speed)
behavior adv: TurnAtIntersection(left, adv_speed)
behavior adv: FollowLane(adv_speed)
predict adv at timepoint
"#;

fn run(
    model: &mut dyn Predictor,
    kind: SamplerKind,
    n: usize,
    seed: u64,
) -> trajfals_core::falsify::FalsifyResult {
    let prog = parse(LEFT_TURN).unwrap();
    let spec = MetricSpec::default();
    falsify(&prog, &spec, FalsifyConfig::new(kind, n, seed), |p| {
        let out = evaluate(&p.scenario, model, &spec, EvalConfig::default())
            .map_err(|e| e.to_string())?;
        assert_eq!(out.predictions.candidates.len(), 6);
        assert!(out.predictions.candidates.iter().all(|c| c.len() == 15));
        assert_eq!(out.window.future.len(), 15);
        Ok(out.evaluation)
    })
    .unwrap()
}

#[test]
fn constant_velocity_fails_on_turns() {
    let r = run(&mut ConstantVelocity, SamplerKind::Mab, 40, 3);
    assert_eq!(r.stats.n_samples + r.failed, 40);
    assert!(r.stats.n_counterexamples > 0);
}

#[test]
fn lane_follow_beats_constant_velocity_on_turns() {
    let cv = run(&mut ConstantVelocity, SamplerKind::Halton, 30, 0);
    let lf = run(&mut LaneFollow, SamplerKind::Halton, 30, 0);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&lf.min_fdes()) < mean(&cv.min_fdes()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn error_table_is_exactly_the_counterexamples(seed in 0u64..1000, kind in 0usize..3) {
        let kind = [SamplerKind::Uniform, SamplerKind::Halton, SamplerKind::Mab][kind];
        let r = run(&mut ConstantVelocity, kind, 8, seed);
        let flagged: Vec<usize> = r
            .samples
            .iter()
            .filter(|s| s.is_counterexample)
            .map(|s| s.index)
            .collect();
        let rows: Vec<usize> = r.error_table.iter().map(|e| e.index).collect();
        prop_assert_eq!(&flagged, &rows);
        for row in &r.error_table {
            prop_assert!(row.scores.iter().any(|&s| s < 0.0));
        }
        for s in r.samples.iter().filter(|s| !s.is_counterexample) {
            if let Some(scores) = &s.scores {
                prop_assert!(scores.iter().all(|&v| v >= 0.0));
            }
        }
        prop_assert_eq!(r, run(&mut ConstantVelocity, kind, 8, seed));
    }
}
