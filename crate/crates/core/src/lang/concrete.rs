//! Feature spaces and concrete scenarios.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::Serialize;

use super::ast::*;
use super::error::ConcretizeError;
use super::parser::{builder_params, map_spec};
use crate::geom::Vec2;
use crate::road::{LaneId, Maneuver, MapSpec, RoadNetwork};
use crate::HISTORY_STEPS;

/// A named, sampleable dimension of the scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Feature {
    pub name: String,
    pub distribution: Distribution,
    /// `hi - lo` for ranges.
    pub interval_length: Option<f64>,
}

impl Feature {
    pub fn new(name: String, distribution: Distribution) -> Self {
        let interval_length = distribution.interval_length();
        Feature {
            name,
            distribution,
            interval_length,
        }
    }
}

fn collect_inline(e: &Expr, out: &mut Vec<Feature>) {
    match e {
        Expr::Dist { dist, feature, .. } => {
            if !matches!(dist, Distribution::Constant { .. }) {
                out.push(Feature::new(feature.clone(), dist.clone()));
            }
        }
        Expr::Unary { expr, .. } => collect_inline(expr, out),
        Expr::Binary { lhs, rhs, .. } => {
            collect_inline(lhs, out);
            collect_inline(rhs, out);
        }
        Expr::Call { args, .. } => args.iter().for_each(|a| collect_inline(a, out)),
        Expr::Num { .. } | Expr::Bool { .. } | Expr::Ident { .. } => {}
    }
}

/// Non-constant params in declaration order, then hoisted inline
/// distributions in source order (map, agents, predict).
pub fn feature_space(program: &ScenarioProgram) -> Vec<Feature> {
    let mut out: Vec<Feature> = program
        .params
        .iter()
        .filter(|p| !matches!(p.dist, Distribution::Constant { .. }))
        .map(|p| Feature::new(p.name.clone(), p.dist.clone()))
        .collect();
    for (_, e) in &program.map.args {
        collect_inline(e, &mut out);
    }
    for a in &program.agents {
        collect_inline(&a.offset, &mut out);
        collect_inline(&a.speed, &mut out);
        for s in &a.behavior {
            for (_, e) in s.kind.numeric_args() {
                collect_inline(e, &mut out);
            }
            if let Some(e) = &s.for_seconds {
                collect_inline(e, &mut out);
            }
        }
    }
    collect_inline(&program.predict.timepoint, &mut out);
    out
}

/// Name of the feature that decides the prediction timepoint, if sampled.
pub fn timepoint_feature(program: &ScenarioProgram) -> Option<String> {
    match &program.predict.timepoint {
        Expr::Ident { name, .. } => program
            .param(name)
            .filter(|p| !matches!(p.dist, Distribution::Constant { .. }))
            .map(|p| p.name.clone()),
        Expr::Dist { dist, feature, .. } if !matches!(dist, Distribution::Constant { .. }) => {
            Some(feature.clone())
        }
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// resolved runtime expressions

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NumExpr {
    Const {
        value: f64,
    },
    Query {
        func: Func,
        a: usize,
        b: usize,
    },
    Neg {
        expr: Box<NumExpr>,
    },
    Bin {
        op: BinOp,
        lhs: Box<NumExpr>,
        rhs: Box<NumExpr>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cond {
    Const {
        value: bool,
    },
    Cmp {
        op: BinOp,
        lhs: NumExpr,
        rhs: NumExpr,
    },
    Not {
        cond: Box<Cond>,
    },
    And {
        lhs: Box<Cond>,
        rhs: Box<Cond>,
    },
    Or {
        lhs: Box<Cond>,
        rhs: Box<Cond>,
    },
}

/// Read access to agent kinematics for condition evaluation.
pub trait AgentView {
    fn position(&self, agent: usize) -> Vec2;
    fn heading(&self, agent: usize) -> f64;
    fn speed(&self, agent: usize) -> f64;
    fn initial_position(&self, agent: usize) -> Vec2;
}

impl NumExpr {
    pub fn eval(&self, view: &dyn AgentView) -> f64 {
        match self {
            NumExpr::Const { value } => *value,
            NumExpr::Query { func, a, b } => match func {
                Func::Dist => view.position(*a).dist(view.position(*b)),
                Func::InitialDist => view.initial_position(*a).dist(view.initial_position(*b)),
                Func::Lead => {
                    (view.position(*a) - view.position(*b)).dot(Vec2::from_angle(view.heading(*b)))
                }
                Func::Speed => view.speed(*a),
            },
            NumExpr::Neg { expr } => -expr.eval(view),
            NumExpr::Bin { op, lhs, rhs } => {
                let (x, y) = (lhs.eval(view), rhs.eval(view));
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    _ => x / y,
                }
            }
        }
    }
}

impl Cond {
    pub fn eval(&self, view: &dyn AgentView) -> bool {
        match self {
            Cond::Const { value } => *value,
            Cond::Cmp { op, lhs, rhs } => {
                let (x, y) = (lhs.eval(view), rhs.eval(view));
                match op {
                    BinOp::Lt => x < y,
                    BinOp::Le => x <= y,
                    BinOp::Gt => x > y,
                    _ => x >= y,
                }
            }
            Cond::Not { cond } => !cond.eval(view),
            Cond::And { lhs, rhs } => lhs.eval(view) && rhs.eval(view),
            Cond::Or { lhs, rhs } => lhs.eval(view) || rhs.eval(view),
        }
    }
}

// ---------------------------------------------------------------------------
// concrete scenario

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    FollowLane {
        target_speed: f64,
    },
    LaneChange {
        direction: Direction,
        duration: f64,
    },
    TurnAtIntersection {
        maneuver: Maneuver,
        target_speed: f64,
    },
    StopAndWait {
        clear_radius: f64,
    },
    BrakeOnCollisionRisk {
        ttc: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcreteStep {
    pub action: Action,
    pub for_seconds: Option<f64>,
    pub until: Option<Cond>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcreteAgent {
    pub name: String,
    pub is_ego: bool,
    pub lane: LaneId,
    /// Absolute arc offset from the lane start.
    pub arc_offset: f64,
    pub speed: f64,
    pub behavior: Vec<ConcreteStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcreteScenario {
    pub program_id: String,
    pub feature_assignment: BTreeMap<String, f64>,
    pub map: MapSpec,
    #[serde(skip)]
    pub network: Arc<RoadNetwork>,
    pub agents: Vec<ConcreteAgent>,
    /// Index of the predict-target agent.
    pub target: usize,
    pub timepoint: u32,
    pub seed: u64,
}

impl ConcreteScenario {
    pub fn target_name(&self) -> &str {
        &self.agents[self.target].name
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.name == name)
    }

    /// Initial (position, heading) of every agent.
    pub fn initial_poses(&self) -> Vec<(Vec2, f64)> {
        self.agents
            .iter()
            .map(|a| {
                let lane = &self.network.lanes[&a.lane];
                (lane.point_at(a.arc_offset), lane.heading_at(a.arc_offset))
            })
            .collect()
    }
}

/// Result of concretizing an assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum Concretized {
    Accepted(ConcreteScenario),
    /// The requirement at this index (declaration order) does not hold.
    Rejected {
        requirement: usize,
    },
}

struct Env<'a> {
    program: &'a ScenarioProgram,
    assignment: &'a BTreeMap<String, f64>,
}

impl Env<'_> {
    fn num(&self, e: &Expr, what: &str) -> Result<f64, ConcretizeError> {
        let v = self.eval(e, what)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ConcretizeError::NonFinite {
                what: what.to_string(),
            })
        }
    }

    fn eval(&self, e: &Expr, what: &str) -> Result<f64, ConcretizeError> {
        Ok(match e {
            Expr::Num { lit, .. } => lit.value,
            Expr::Ident { name, .. } => match self.program.param(name).map(|p| &p.dist) {
                Some(Distribution::Constant { value }) => value.value,
                Some(_) => self.feature(name)?,
                None => {
                    return Err(ConcretizeError::InvalidValue {
                        what: what.to_string(),
                        reason: format!("`{name}` is not numeric"),
                    })
                }
            },
            Expr::Dist { dist, feature, .. } => match dist {
                Distribution::Constant { value } => value.value,
                _ => self.feature(feature)?,
            },
            Expr::Unary {
                op: UnOp::Neg,
                expr,
                ..
            } => -self.eval(expr, what)?,
            Expr::Binary { op, lhs, rhs, .. } => {
                let (x, y) = (self.eval(lhs, what)?, self.eval(rhs, what)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    _ => {
                        return Err(ConcretizeError::InvalidValue {
                            what: what.to_string(),
                            reason: "expected a number".into(),
                        })
                    }
                }
            }
            _ => {
                return Err(ConcretizeError::InvalidValue {
                    what: what.to_string(),
                    reason: "expected a number".into(),
                })
            }
        })
    }

    fn feature(&self, name: &str) -> Result<f64, ConcretizeError> {
        self.assignment
            .get(name)
            .copied()
            .ok_or_else(|| ConcretizeError::MissingFeature(name.to_string()))
    }

    fn positive(&self, e: &Expr, what: &str) -> Result<f64, ConcretizeError> {
        let v = self.num(e, what)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(ConcretizeError::NonPositive {
                what: what.to_string(),
                value: v,
            })
        }
    }

    fn agent_ref(&self, e: &Expr) -> Result<usize, ConcretizeError> {
        match e {
            Expr::Ident { name, .. } => {
                self.program
                    .agent_index(name)
                    .ok_or_else(|| ConcretizeError::InvalidValue {
                        what: name.clone(),
                        reason: "not an agent".into(),
                    })
            }
            _ => Err(ConcretizeError::InvalidValue {
                what: "query".into(),
                reason: "expected an agent name".into(),
            }),
        }
    }

    fn num_expr(&self, e: &Expr) -> Result<NumExpr, ConcretizeError> {
        Ok(match e {
            Expr::Call { func, args, .. } => {
                let a = self.agent_ref(&args[0])?;
                let b = if args.len() > 1 {
                    self.agent_ref(&args[1])?
                } else {
                    a
                };
                NumExpr::Query { func: *func, a, b }
            }
            Expr::Unary {
                op: UnOp::Neg,
                expr,
                ..
            } => NumExpr::Neg {
                expr: Box::new(self.num_expr(expr)?),
            },
            Expr::Binary { op, lhs, rhs, .. }
                if !op.is_comparison() && !matches!(op, BinOp::And | BinOp::Or) =>
            {
                NumExpr::Bin {
                    op: *op,
                    lhs: Box::new(self.num_expr(lhs)?),
                    rhs: Box::new(self.num_expr(rhs)?),
                }
            }
            other => NumExpr::Const {
                value: self.num(other, "condition operand")?,
            },
        })
    }

    fn cond(&self, e: &Expr) -> Result<Cond, ConcretizeError> {
        Ok(match e {
            Expr::Bool { value, .. } => Cond::Const { value: *value },
            Expr::Unary {
                op: UnOp::Not,
                expr,
                ..
            } => Cond::Not {
                cond: Box::new(self.cond(expr)?),
            },
            Expr::Binary {
                op: BinOp::And,
                lhs,
                rhs,
                ..
            } => Cond::And {
                lhs: Box::new(self.cond(lhs)?),
                rhs: Box::new(self.cond(rhs)?),
            },
            Expr::Binary {
                op: BinOp::Or,
                lhs,
                rhs,
                ..
            } => Cond::Or {
                lhs: Box::new(self.cond(lhs)?),
                rhs: Box::new(self.cond(rhs)?),
            },
            Expr::Binary { op, lhs, rhs, .. } if op.is_comparison() => Cond::Cmp {
                op: *op,
                lhs: self.num_expr(lhs)?,
                rhs: self.num_expr(rhs)?,
            },
            _ => {
                return Err(ConcretizeError::InvalidValue {
                    what: "condition".into(),
                    reason: "expected a boolean".into(),
                })
            }
        })
    }
}

struct InitialView<'a> {
    poses: &'a [(Vec2, f64)],
    speeds: &'a [f64],
}

impl AgentView for InitialView<'_> {
    fn position(&self, agent: usize) -> Vec2 {
        self.poses[agent].0
    }
    fn heading(&self, agent: usize) -> f64 {
        self.poses[agent].1
    }
    fn speed(&self, agent: usize) -> f64 {
        self.speeds[agent]
    }
    fn initial_position(&self, agent: usize) -> Vec2 {
        self.poses[agent].0
    }
}

/// Checks that `assignment` covers exactly the feature space with in-support values.
pub fn check_assignment(
    features: &[Feature],
    assignment: &BTreeMap<String, f64>,
) -> Result<(), ConcretizeError> {
    for f in features {
        let v = *assignment
            .get(&f.name)
            .ok_or_else(|| ConcretizeError::MissingFeature(f.name.clone()))?;
        if !v.is_finite() || !f.distribution.contains(v) {
            return Err(ConcretizeError::OutOfSupport {
                name: f.name.clone(),
                value: v,
            });
        }
    }
    if let Some(extra) = assignment
        .keys()
        .find(|k| !features.iter().any(|f| &f.name == *k))
    {
        return Err(ConcretizeError::ExtraFeature(extra.clone()));
    }
    Ok(())
}

/// Resolves every expression of `program` under `assignment`.
///
/// Pure in `(program, assignment)`; `seed` is carried through unchanged.
pub fn concretize(
    program: &ScenarioProgram,
    assignment: &BTreeMap<String, f64>,
    seed: u64,
) -> Result<Concretized, ConcretizeError> {
    let features = feature_space(program);
    check_assignment(&features, assignment)?;
    let env = Env {
        program,
        assignment,
    };

    let bparams =
        builder_params(&program.map.builder).ok_or_else(|| ConcretizeError::InvalidValue {
            what: "map".into(),
            reason: format!("unknown builder `{}`", program.map.builder),
        })?;
    let mut values = BTreeMap::new();
    for &(name, default, _) in bparams {
        match program.map.args.iter().find(|(n, _)| n == name) {
            Some((_, e)) => {
                values.insert(name, env.num(e, name)?);
            }
            None => {
                if let Some(d) = default {
                    values.insert(name, d);
                }
            }
        }
    }
    let map = map_spec(&program.map.builder, &values).map_err(|reason| {
        ConcretizeError::InvalidValue {
            what: "map".into(),
            reason,
        }
    })?;
    let network = Arc::new(map.build()?);

    let mut agents = Vec::with_capacity(program.agents.len());
    for a in &program.agents {
        let lane = network
            .lane_by_name(&a.lane)
            .ok_or_else(|| ConcretizeError::InvalidValue {
                what: format!("agent `{}`", a.name),
                reason: format!("unknown lane `{}`", a.lane),
            })?;
        let raw = env.num(&a.offset, "arc offset")?;
        let arc_offset = if raw < 0.0 { lane.length() + raw } else { raw };
        if !(0.0..=lane.length()).contains(&arc_offset) {
            return Err(ConcretizeError::InvalidValue {
                what: format!("agent `{}` offset", a.name),
                reason: format!(
                    "{raw} is outside lane `{}` (length {:.3})",
                    a.lane,
                    lane.length()
                ),
            });
        }
        let speed = env.num(&a.speed, "initial speed")?;
        if speed < 0.0 {
            return Err(ConcretizeError::NonPositive {
                what: format!("agent `{}` speed", a.name),
                value: speed,
            });
        }
        let mut behavior = Vec::with_capacity(a.behavior.len());
        for s in &a.behavior {
            let action = match &s.kind {
                StepKind::FollowLane { target_speed } => Action::FollowLane {
                    target_speed: env.positive(target_speed, "target_speed")?,
                },
                StepKind::LaneChange {
                    direction,
                    duration,
                } => Action::LaneChange {
                    direction: *direction,
                    duration: env.positive(duration, "duration")?,
                },
                StepKind::TurnAtIntersection {
                    maneuver,
                    target_speed,
                } => Action::TurnAtIntersection {
                    maneuver: *maneuver,
                    target_speed: env.positive(target_speed, "target_speed")?,
                },
                StepKind::StopAndWait { clear_radius } => Action::StopAndWait {
                    clear_radius: env.positive(clear_radius, "clear_radius")?,
                },
                StepKind::BrakeOnCollisionRisk { ttc } => Action::BrakeOnCollisionRisk {
                    ttc: env.positive(ttc, "ttc")?,
                },
            };
            let for_seconds = s
                .for_seconds
                .as_ref()
                .map(|e| env.positive(e, "for"))
                .transpose()?;
            let until = s.until.as_ref().map(|e| env.cond(e)).transpose()?;
            behavior.push(ConcreteStep {
                action,
                for_seconds,
                until,
            });
        }
        agents.push(ConcreteAgent {
            name: a.name.clone(),
            is_ego: a.is_ego,
            lane: lane.id.clone(),
            arc_offset,
            speed,
            behavior,
        });
    }

    let tp = env.num(&program.predict.timepoint, "timepoint")?;
    if tp != libm::trunc(tp) || tp < HISTORY_STEPS as f64 || tp > u32::MAX as f64 {
        return Err(ConcretizeError::InvalidValue {
            what: "timepoint".into(),
            reason: format!("must be an integer >= {HISTORY_STEPS}, got {tp}"),
        });
    }
    let target = program
        .agent_index(&program.predict.target)
        .ok_or_else(|| ConcretizeError::InvalidValue {
            what: "predict".into(),
            reason: "unknown target".into(),
        })?;

    let scenario = ConcreteScenario {
        program_id: program.id.clone(),
        feature_assignment: assignment.clone(),
        map,
        network,
        agents,
        target,
        timepoint: tp as u32,
        seed,
    };

    let poses = scenario.initial_poses();
    let speeds: Vec<f64> = scenario.agents.iter().map(|a| a.speed).collect();
    let view = InitialView {
        poses: &poses,
        speeds: &speeds,
    };
    for (i, r) in program.requirements.iter().enumerate() {
        if !env.cond(r)?.eval(&view) {
            return Ok(Concretized::Rejected { requirement: i });
        }
    }
    Ok(Concretized::Accepted(scenario))
}
