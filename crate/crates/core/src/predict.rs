//! Predictor interface and the in-tree baselines.
//!
//! Every prediction passes through [`predict`], which checks the request
//! and rejects malformed output instead of repairing it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::geom::{normalize_angle, Vec2};
use crate::road::{Lane, RoadNetwork};
use crate::sim::{Pose, Window};
use crate::{DT, HISTORY_STEPS};

/// Steps used by the least-squares velocity fit.
pub const VELOCITY_FIT_STEPS: usize = 10;
/// Heading perturbation between successive fan candidates, radians.
pub const FAN_STEP: f64 = 5.0 * PI / 180.0;
/// Speed scales applied when routes run out.
pub const SPEED_SCALES: [f64; 2] = [0.8, 1.2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRequest {
    pub scenario_id: String,
    /// Per-agent history of exactly `HISTORY_STEPS` poses at `DT`.
    pub history: BTreeMap<String, Vec<Pose>>,
    #[serde(skip)]
    pub map: Arc<RoadNetwork>,
    pub target: String,
    pub horizon: usize,
    pub k: usize,
}

impl PredictionRequest {
    /// Builds a request from a trace window; `agents` names the window rows.
    pub fn from_window(
        scenario_id: &str,
        agents: &[String],
        window: &Window,
        map: Arc<RoadNetwork>,
        target: &str,
        horizon: usize,
        k: usize,
    ) -> Self {
        let history = agents
            .iter()
            .cloned()
            .zip(window.history.iter().cloned())
            .collect();
        PredictionRequest {
            scenario_id: scenario_id.into(),
            history,
            map,
            target: target.into(),
            horizon,
            k,
        }
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        let bad = |reason: String| PredictError::InvalidRequest {
            scenario_id: self.scenario_id.clone(),
            reason,
        };
        if self.k == 0 || self.horizon == 0 {
            return Err(bad("k and horizon must be positive".into()));
        }
        if !self.history.contains_key(&self.target) {
            return Err(bad(format!("target `{}` has no history", self.target)));
        }
        for (name, h) in &self.history {
            if h.len() != HISTORY_STEPS {
                return Err(bad(format!(
                    "agent `{name}` has {} history steps, expected {HISTORY_STEPS}",
                    h.len()
                )));
            }
            if h.iter()
                .any(|p| !p.position.is_finite() || !p.heading.is_finite())
            {
                return Err(bad(format!("agent `{name}` has non-finite history")));
            }
        }
        Ok(())
    }

    pub fn target_history(&self) -> &[Pose] {
        &self.history[&self.target]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionSet {
    pub candidates: Vec<Vec<Vec2>>,
    /// Optional per-candidate confidences; carried through, never used for scoring.
    pub confidences: Option<Vec<f64>>,
}

impl PredictionSet {
    /// Why this set violates the `k` x `horizon` contract, if it does.
    pub fn check(&self, k: usize, horizon: usize) -> Result<(), String> {
        if self.candidates.len() != k {
            return Err(format!(
                "expected {k} candidates, got {}",
                self.candidates.len()
            ));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if c.len() != horizon {
                return Err(format!(
                    "candidate {i} has {} points, expected {horizon}",
                    c.len()
                ));
            }
            if c.iter().any(|p| !p.is_finite()) {
                return Err(format!("candidate {i} has non-finite coordinates"));
            }
        }
        if let Some(conf) = &self.confidences {
            if conf.len() != k {
                return Err(format!("expected {k} confidences, got {}", conf.len()));
            }
            if conf.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err("confidences must be finite and non-negative".into());
            }
            if conf.iter().sum::<f64>() > 1.0 + 1e-6 {
                return Err("confidences sum above 1".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error("[{scenario_id}] invalid request: {reason}")]
    InvalidRequest { scenario_id: String, reason: String },
    #[error("[{scenario_id}] malformed predictor output: {reason}")]
    Malformed { scenario_id: String, reason: String },
    #[error("[{scenario_id}] predictor timed out after {seconds} s")]
    Timeout { scenario_id: String, seconds: f64 },
    #[error("[{scenario_id}] predictor process failed: {detail}")]
    Crashed { scenario_id: String, detail: String },
    #[error("[{scenario_id}] no lane within tolerance of the target")]
    NoLane { scenario_id: String },
}

impl PredictError {
    pub fn scenario_id(&self) -> &str {
        match self {
            PredictError::InvalidRequest { scenario_id, .. }
            | PredictError::Malformed { scenario_id, .. }
            | PredictError::Timeout { scenario_id, .. }
            | PredictError::Crashed { scenario_id, .. }
            | PredictError::NoLane { scenario_id } => scenario_id,
        }
    }
}

/// A trajectory prediction model. Instances are owned by one worker.
pub trait Predictor: Send {
    fn name(&self) -> &str;

    fn predict(&mut self, request: &PredictionRequest) -> Result<PredictionSet, PredictError>;

    /// Hands the ground-truth future to test predictors ahead of `predict`.
    /// Real models ignore it.
    fn peek_future(&mut self, _future: &[Vec2]) {}
}

/// Validates `request`, runs `model` and validates its output.
pub fn predict(
    model: &mut dyn Predictor,
    request: &PredictionRequest,
) -> Result<PredictionSet, PredictError> {
    request.validate()?;
    let set = model.predict(request)?;
    set.check(request.k, request.horizon)
        .map_err(|reason| PredictError::Malformed {
            scenario_id: request.scenario_id.clone(),
            reason,
        })?;
    Ok(set)
}

/// Least-squares velocity (m/s) over the last `VELOCITY_FIT_STEPS` poses.
pub fn fit_velocity(history: &[Pose]) -> Vec2 {
    let n = history.len().min(VELOCITY_FIT_STEPS);
    if n < 2 {
        return Vec2::ZERO;
    }
    let pts = &history[history.len() - n..];
    let t_mean = (n - 1) as f64 / 2.0;
    let mut p_mean = Vec2::ZERO;
    for p in pts {
        p_mean = p_mean + p.position;
    }
    p_mean = p_mean * (1.0 / n as f64);
    let mut num = Vec2::ZERO;
    let mut den = 0.0;
    for (i, p) in pts.iter().enumerate() {
        let dt = i as f64 - t_mean;
        num = num + (p.position - p_mean) * dt;
        den += dt * dt;
    }
    num * (1.0 / (den * DT))
}

/// Heading offset of fan candidate `j`: 0, +5, -5, +10, -10, +15, ... degrees.
pub fn fan_angle(j: usize) -> f64 {
    let mag = j.div_ceil(2) as f64 * FAN_STEP;
    if j % 2 == 1 {
        mag
    } else {
        -mag
    }
}

/// Constant-velocity baseline with a deterministic heading fan.
pub fn constant_velocity(history: &[Pose], k: usize, horizon: usize) -> PredictionSet {
    let v = fit_velocity(history);
    let last = history.last().map_or(Vec2::ZERO, |p| p.position);
    let candidates = (0..k)
        .map(|j| {
            let vj = if j == 0 { v } else { v.rotate(fan_angle(j)) };
            (1..=horizon).map(|h| last + vj * (DT * h as f64)).collect()
        })
        .collect();
    PredictionSet {
        candidates,
        confidences: None,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantVelocity;

impl Predictor for ConstantVelocity {
    fn name(&self) -> &str {
        "constant-velocity"
    }

    fn predict(&mut self, request: &PredictionRequest) -> Result<PredictionSet, PredictError> {
        Ok(constant_velocity(
            request.target_history(),
            request.k,
            request.horizon,
        ))
    }
}

/// Nearest heading-compatible lane within two lane widths of `pose`.
pub fn locate(map: &RoadNetwork, pose: Pose) -> Option<(&Lane, f64)> {
    let mut best: Option<(&Lane, f64, f64)> = None;
    for lane in map.lanes.values() {
        let (s, _) = lane.project(pose.position);
        let d = pose.position.dist(lane.point_at(s));
        if d > 2.0 * lane.width {
            continue;
        }
        if normalize_angle(lane.heading_at(s) - pose.heading).abs() >= PI / 2.0 {
            continue;
        }
        if best.is_none_or(|(_, _, bd)| d < bd) {
            best = Some((lane, s, d));
        }
    }
    best.map(|(l, s, _)| (l, s))
}

/// Distinct successor routes from `lane` long enough to cover `reach`
/// metres past `s`, default continuation first.
pub fn routes<'a>(map: &'a RoadNetwork, lane: &'a Lane, s: f64, reach: f64) -> Vec<Vec<&'a Lane>> {
    let mut out = Vec::new();
    let mut stack = alloc::vec![(alloc::vec![lane], lane.length() - s)];
    while let Some((route, covered)) = stack.pop() {
        let last = route[route.len() - 1];
        let mut next: Vec<&Lane> = last
            .successors
            .iter()
            .filter_map(|id| map.lanes.get(id))
            .collect();
        if let Some(d) = map.default_successor(last) {
            next.retain(|l| l.id != d.id);
            next.insert(0, d);
        }
        if covered >= reach || next.is_empty() {
            out.push(route);
            continue;
        }
        // reversed so the default continuation is explored first
        for n in next.into_iter().rev() {
            let mut r = route.clone();
            r.push(n);
            stack.push((r, covered + n.length()));
        }
    }
    out
}

fn point_on_route(route: &[&Lane], mut s: f64) -> Vec2 {
    for (i, lane) in route.iter().enumerate() {
        if s <= lane.length() || i + 1 == route.len() {
            return lane.point_at(s);
        }
        s -= lane.length();
    }
    unreachable!("routes are non-empty")
}

/// Map-aware baseline: arc-length advance along each successor route at
/// the current speed; surplus candidates reuse routes at scaled speeds.
pub fn lane_follow(request: &PredictionRequest) -> Result<PredictionSet, PredictError> {
    let history = request.target_history();
    let last = *history.last().ok_or_else(|| PredictError::NoLane {
        scenario_id: request.scenario_id.clone(),
    })?;
    let (lane, s0) = locate(&request.map, last).ok_or_else(|| PredictError::NoLane {
        scenario_id: request.scenario_id.clone(),
    })?;
    let speed = fit_velocity(history).norm();
    let reach = speed * SPEED_SCALES[1] * DT * request.horizon as f64;
    let rs = routes(&request.map, lane, s0, reach);
    let candidates = (0..request.k)
        .map(|j| {
            let (route, scale) = if j < rs.len() {
                (&rs[j], 1.0)
            } else {
                let e = j - rs.len();
                (&rs[(e / 2) % rs.len()], SPEED_SCALES[e % 2])
            };
            (1..=request.horizon)
                .map(|h| point_on_route(route, s0 + speed * scale * DT * h as f64))
                .collect()
        })
        .collect();
    Ok(PredictionSet {
        candidates,
        confidences: None,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LaneFollow;

impl Predictor for LaneFollow {
    fn name(&self) -> &str {
        "lane-follow"
    }

    fn predict(&mut self, request: &PredictionRequest) -> Result<PredictionSet, PredictError> {
        lane_follow(request)
    }
}

/// Returns the true future as every candidate.
#[cfg(any(test, feature = "testing"))]
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    future: Vec<Vec2>,
}

#[cfg(any(test, feature = "testing"))]
impl Predictor for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&mut self, request: &PredictionRequest) -> Result<PredictionSet, PredictError> {
        let mut c = self.future.clone();
        c.truncate(request.horizon);
        Ok(PredictionSet {
            candidates: alloc::vec![c; request.k],
            confidences: None,
        })
    }

    fn peek_future(&mut self, future: &[Vec2]) {
        self.future = future.to_vec();
    }
}

/// Returns the true future displaced by `MISS_OFFSET` metres, so every
/// sample misses every threshold.
#[cfg(any(test, feature = "testing"))]
#[derive(Debug, Clone, Default)]
pub struct AlwaysMiss {
    future: Vec<Vec2>,
}

#[cfg(any(test, feature = "testing"))]
impl AlwaysMiss {
    pub const MISS_OFFSET: f64 = 10.0;
}

#[cfg(any(test, feature = "testing"))]
impl Predictor for AlwaysMiss {
    fn name(&self) -> &str {
        "always-miss"
    }

    fn predict(&mut self, request: &PredictionRequest) -> Result<PredictionSet, PredictError> {
        let off = Vec2::new(Self::MISS_OFFSET, 0.0);
        let c: Vec<Vec2> = self
            .future
            .iter()
            .take(request.horizon)
            .map(|p| *p + off)
            .collect();
        Ok(PredictionSet {
            candidates: alloc::vec![c; request.k],
            confidences: None,
        })
    }

    fn peek_future(&mut self, future: &[Vec2]) {
        self.future = future.to_vec();
    }
}
