//! Canonical JSON documents.
//!
//! Objects are emitted with sorted keys (`serde_json::Value` maps are
//! ordered) and compact separators, so equal inputs give equal bytes.
//! Map coordinates are rounded to 6 decimal places.

use serde::Serialize;
use serde_json::{json, Map, Value};
use trajfals_core::lang::{ConcreteScenario, ScenarioProgram};
use trajfals_core::road::RoadNetwork;
use trajfals_core::sim::Trace;

pub fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Serializes `value` through `serde_json::Value`, which sorts object keys.
pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<Value> {
    serde_json::to_value(value)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    serde_json::to_string(&to_canonical_value(value)?)
}

pub fn network_json(net: &RoadNetwork) -> Value {
    let lanes: Vec<Value> = net
        .lanes
        .values()
        .map(|l| {
            let mut o = Map::new();
            o.insert("id".into(), json!(l.id.0));
            o.insert(
                "centerline".into(),
                Value::Array(
                    l.centerline
                        .iter()
                        .map(|p| json!([round6(p.x), round6(p.y)]))
                        .collect(),
                ),
            );
            o.insert("width".into(), json!(round6(l.width)));
            o.insert(
                "successors".into(),
                json!(l.successors.iter().map(|s| &s.0).collect::<Vec<_>>()),
            );
            o.insert(
                "left_adjacent".into(),
                json!(l.left_adjacent.as_ref().map(|a| &a.0)),
            );
            o.insert(
                "right_adjacent".into(),
                json!(l.right_adjacent.as_ref().map(|a| &a.0)),
            );
            Value::Object(o)
        })
        .collect();
    let routes: Map<String, Value> = net
        .named_routes
        .iter()
        .map(|(name, ids)| {
            (
                name.clone(),
                json!(ids.iter().map(|i| &i.0).collect::<Vec<_>>()),
            )
        })
        .collect();
    json!({ "lanes": lanes, "routes": routes })
}

pub fn program_json(program: &ScenarioProgram) -> serde_json::Result<Value> {
    to_canonical_value(program)
}

pub fn scenario_json(scenario: &ConcreteScenario) -> serde_json::Result<Value> {
    to_canonical_value(scenario)
}

/// `{"dt", "agents", "steps": [[{x, y, heading, speed, lane, behavior_step}]]}`.
pub fn trace_json(trace: &Trace) -> Value {
    let steps: Vec<Value> = trace
        .steps
        .iter()
        .map(|states| {
            Value::Array(
                states
                    .iter()
                    .map(|s| {
                        json!({
                            "x": s.position.x,
                            "y": s.position.y,
                            "heading": s.heading,
                            "speed": s.speed,
                            "lane": s.lane.0,
                            "behavior_step": s.behavior_step,
                        })
                    })
                    .collect(),
            )
        })
        .collect();
    json!({ "dt": trace.dt, "agents": trace.agents, "steps": steps })
}
