//! Abstract syntax of `.tsc` scenario programs.
//!
//! Spans are kept for diagnostics but skipped when serializing, so the
//! canonical JSON dump of two structurally equal programs is identical.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;

use crate::road::Maneuver;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

/// Numeric literal; `is_int` records the lexical form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Literal {
    pub value: f64,
    pub is_int: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Distribution {
    Range { lo: Literal, hi: Literal },
    Choice { values: Vec<Literal> },
    Constant { value: Literal },
}

impl Distribution {
    /// `hi - lo` for ranges; `None` otherwise.
    pub fn interval_length(&self) -> Option<f64> {
        match self {
            Distribution::Range { lo, hi } => Some(hi.value - lo.value),
            _ => None,
        }
    }

    pub fn is_int(&self) -> bool {
        match self {
            Distribution::Range { .. } => false,
            Distribution::Choice { values } => values.iter().all(|v| v.is_int),
            Distribution::Constant { value } => value.is_int,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match self {
            Distribution::Range { lo, hi } => v >= lo.value && v <= hi.value,
            Distribution::Choice { values } => values.iter().any(|c| c.value == v),
            Distribution::Constant { value } => value.value == v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Func {
    Dist,
    InitialDist,
    Lead,
    Speed,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Dist => "dist",
            Func::InitialDist => "initial_dist",
            Func::Lead => "lead",
            Func::Speed => "speed",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "dist" => Func::Dist,
            "initial_dist" => Func::InitialDist,
            "lead" => Func::Lead,
            "speed" => Func::Speed,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        if self == Func::Speed {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Expr {
    Num {
        lit: Literal,
        #[serde(skip)]
        span: Span,
    },
    Bool {
        value: bool,
        #[serde(skip)]
        span: Span,
    },
    Ident {
        name: String,
        #[serde(skip)]
        span: Span,
    },
    Unary {
        op: UnOp,
        expr: Box<Expr>,
        #[serde(skip)]
        span: Span,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        #[serde(skip)]
        span: Span,
    },
    Call {
        func: Func,
        args: Vec<Expr>,
        #[serde(skip)]
        span: Span,
    },
    /// Inline distribution, hoisted into the feature space as `feature`.
    Dist {
        dist: Distribution,
        feature: String,
        #[serde(skip)]
        span: Span,
    },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Num { span, .. }
            | Expr::Bool { span, .. }
            | Expr::Ident { span, .. }
            | Expr::Unary { span, .. }
            | Expr::Binary { span, .. }
            | Expr::Call { span, .. }
            | Expr::Dist { span, .. } => *span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "step")]
pub enum StepKind {
    FollowLane {
        target_speed: Expr,
    },
    LaneChange {
        direction: Direction,
        duration: Expr,
    },
    TurnAtIntersection {
        maneuver: Maneuver,
        target_speed: Expr,
    },
    StopAndWait {
        clear_radius: Expr,
    },
    /// Modifier: active across the agent's whole behavior once declared.
    BrakeOnCollisionRisk {
        ttc: Expr,
    },
}

impl StepKind {
    pub fn name(&self) -> &'static str {
        match self {
            StepKind::FollowLane { .. } => "FollowLane",
            StepKind::LaneChange { .. } => "LaneChange",
            StepKind::TurnAtIntersection { .. } => "TurnAtIntersection",
            StepKind::StopAndWait { .. } => "StopAndWait",
            StepKind::BrakeOnCollisionRisk { .. } => "BrakeOnCollisionRisk",
        }
    }

    /// Numeric arguments as (name, expression) pairs in canonical order.
    pub fn numeric_args(&self) -> Vec<(&'static str, &Expr)> {
        match self {
            StepKind::FollowLane { target_speed } => alloc::vec![("target_speed", target_speed)],
            StepKind::LaneChange { duration, .. } => alloc::vec![("duration", duration)],
            StepKind::TurnAtIntersection { target_speed, .. } => {
                alloc::vec![("target_speed", target_speed)]
            }
            StepKind::StopAndWait { clear_radius } => alloc::vec![("clear_radius", clear_radius)],
            StepKind::BrakeOnCollisionRisk { ttc } => alloc::vec![("ttc", ttc)],
        }
    }

    pub(crate) fn numeric_args_mut(&mut self) -> Vec<(&'static str, &mut Expr)> {
        match self {
            StepKind::FollowLane { target_speed } => alloc::vec![("target_speed", target_speed)],
            StepKind::LaneChange { duration, .. } => alloc::vec![("duration", duration)],
            StepKind::TurnAtIntersection { target_speed, .. } => {
                alloc::vec![("target_speed", target_speed)]
            }
            StepKind::StopAndWait { clear_radius } => alloc::vec![("clear_radius", clear_radius)],
            StepKind::BrakeOnCollisionRisk { ttc } => alloc::vec![("ttc", ttc)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehaviorStep {
    pub kind: StepKind,
    /// Completes the step after this many seconds.
    pub for_seconds: Option<Expr>,
    /// Completes the step once the condition holds.
    pub until: Option<Expr>,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentDecl {
    pub name: String,
    pub is_ego: bool,
    pub lane: String,
    /// Arc offset along the lane; negative values count back from the lane end.
    pub offset: Expr,
    pub speed: Expr,
    pub behavior: Vec<BehaviorStep>,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapDecl {
    pub builder: String,
    pub args: Vec<(String, Expr)>,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamDecl {
    pub name: String,
    pub dist: Distribution,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictDecl {
    pub target: String,
    pub timepoint: Expr,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioProgram {
    pub id: String,
    pub map: MapDecl,
    pub params: Vec<ParamDecl>,
    pub agents: Vec<AgentDecl>,
    pub predict: PredictDecl,
    pub requirements: Vec<Expr>,
}

impl ScenarioProgram {
    pub fn param(&self, name: &str) -> Option<&ParamDecl> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.name == name)
    }

    pub fn ego_index(&self) -> usize {
        self.agents
            .iter()
            .position(|a| a.is_ego)
            .expect("validated program has an ego")
    }
}
