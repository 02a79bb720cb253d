//! Recursive-descent parser plus the semantic checks that make a
//! [`ScenarioProgram`] well formed.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::*;
use super::error::{ParseError, ParseErrorKind};
use super::lexer::{tokenize, Tok, Token};
use crate::road::{Maneuver, MapSpec};
use crate::HISTORY_STEPS;

const MAX_DEPTH: usize = 64;

/// Words that cannot name params or agents.
pub const RESERVED: &[&str] = &[
    "map",
    "param",
    "agent",
    "behavior",
    "predict",
    "require",
    "on",
    "at",
    "speed",
    "for",
    "until",
    "and",
    "or",
    "not",
    "true",
    "false",
    "Range",
    "Choice",
    "Constant",
    "dist",
    "initial_dist",
    "lead",
];

pub fn parse(src: &str) -> Result<ScenarioProgram, ParseError> {
    parse_with_id("anonymous", src)
}

/// Parses raw bytes, reporting invalid UTF-8 as a lexical error.
pub fn parse_bytes(id: &str, bytes: &[u8]) -> Result<ScenarioProgram, ParseError> {
    match core::str::from_utf8(bytes) {
        Ok(src) => parse_with_id(id, src),
        Err(e) => {
            let prefix = &bytes[..e.valid_up_to()];
            let line = prefix.iter().filter(|&&b| b == b'\n').count() as u32 + 1;
            let col = prefix.iter().rev().take_while(|&&b| b != b'\n').count() as u32 + 1;
            Err(ParseError::new(
                ParseErrorKind::Lexical,
                Span { line, col },
                "invalid UTF-8".into(),
            ))
        }
    }
}

pub fn parse_with_id(id: &str, src: &str) -> Result<ScenarioProgram, ParseError> {
    let toks = tokenize(src)?;
    let raw = Parser {
        toks,
        pos: 0,
        depth: 0,
    }
    .program()?;
    assemble(id, raw)
}

fn err(kind: ParseErrorKind, span: Span, msg: impl Into<String>) -> ParseError {
    ParseError::new(kind, span, msg.into())
}

struct RawProgram {
    maps: Vec<MapDecl>,
    params: Vec<ParamDecl>,
    agents: Vec<AgentDecl>,
    behaviors: Vec<(String, Span, BehaviorStep)>,
    predicts: Vec<PredictDecl>,
    requirements: Vec<Expr>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos.min(self.toks.len() - 1)]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.peek().clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num { value, .. } => format!("number {value}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
            other => format!("{other:?}"),
        }
    }

    fn unexpected<T>(&self, wanted: &str) -> Result<T, ParseError> {
        let t = self.peek();
        Err(err(
            ParseErrorKind::Syntax,
            t.span,
            format!("expected {wanted}, found {}", Self::describe(&t.tok)),
        ))
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> Result<Span, ParseError> {
        if self.peek().tok == tok {
            Ok(self.bump().span)
        } else {
            self.unexpected(wanted)
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<Span, ParseError> {
        if self.is_keyword(kw) {
            Ok(self.bump().span)
        } else {
            self.unexpected(&format!("`{kw}`"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Span), ParseError> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                let span = self.bump().span;
                Ok((s, span))
            }
            _ => self.unexpected(what),
        }
    }

    fn binding_name(&mut self, what: &str) -> Result<(String, Span), ParseError> {
        let (name, span) = self.ident(what)?;
        if RESERVED.contains(&name.as_str()) {
            return Err(err(
                ParseErrorKind::Syntax,
                span,
                format!("`{name}` is a reserved word"),
            ));
        }
        Ok((name, span))
    }

    fn end_of_statement(&mut self) -> Result<(), ParseError> {
        match self.peek().tok {
            Tok::Newline => {
                self.bump();
                Ok(())
            }
            Tok::Eof => Ok(()),
            _ => self.unexpected("end of line"),
        }
    }

    fn program(mut self) -> Result<RawProgram, ParseError> {
        let mut raw = RawProgram {
            maps: Vec::new(),
            params: Vec::new(),
            agents: Vec::new(),
            behaviors: Vec::new(),
            predicts: Vec::new(),
            requirements: Vec::new(),
        };
        loop {
            let t = self.peek().clone();
            match &t.tok {
                Tok::Eof => break,
                Tok::Newline => {
                    self.bump();
                    continue;
                }
                Tok::Ident(kw) => match kw.as_str() {
                    "map" => {
                        let m = self.map_decl()?;
                        raw.maps.push(m);
                    }
                    "param" => {
                        let p = self.param_decl()?;
                        raw.params.push(p);
                    }
                    "ego" | "agent" => {
                        let a = self.agent_decl()?;
                        raw.agents.push(a);
                    }
                    "behavior" => {
                        let b = self.behavior_decl()?;
                        raw.behaviors.push(b);
                    }
                    "predict" => {
                        let p = self.predict_decl()?;
                        raw.predicts.push(p);
                    }
                    "require" => {
                        self.bump();
                        let e = self.expr()?;
                        raw.requirements.push(e);
                    }
                    _ => return self.unexpected("a statement keyword"),
                },
                _ => return self.unexpected("a statement keyword"),
            }
            self.end_of_statement()?;
        }
        Ok(raw)
    }

    fn map_decl(&mut self) -> Result<MapDecl, ParseError> {
        let span = self.expect_keyword("map")?;
        let (builder, _) = self.ident("map builder name")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                let (name, _) = self.ident("argument name")?;
                self.expect(Tok::Assign, "`=`")?;
                let e = self.expr()?;
                args.push((name, e));
                if self.peek().tok == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(MapDecl {
            builder,
            args,
            span,
        })
    }

    fn param_decl(&mut self) -> Result<ParamDecl, ParseError> {
        let span = self.expect_keyword("param")?;
        let (name, _) = self.binding_name("parameter name")?;
        self.expect(Tok::Assign, "`=`")?;
        let (dname, dspan) = self.ident("a distribution")?;
        let dist = self.distribution(&dname, dspan)?;
        Ok(ParamDecl { name, dist, span })
    }

    fn literal(&mut self) -> Result<Literal, ParseError> {
        let neg = if self.peek().tok == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.peek().tok {
            Tok::Num { value, is_int } => {
                self.bump();
                Ok(Literal {
                    value: if neg { -value } else { value },
                    is_int,
                })
            }
            _ => self.unexpected("a numeric literal"),
        }
    }

    /// Distribution call body; the name has been consumed.
    fn distribution(&mut self, name: &str, span: Span) -> Result<Distribution, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut lits = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                lits.push(self.literal()?);
                if self.peek().tok == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        let dist = match name {
            "Range" => {
                if lits.len() != 2 {
                    return Err(err(
                        ParseErrorKind::Syntax,
                        span,
                        "Range takes exactly 2 arguments",
                    ));
                }
                if lits[0].value >= lits[1].value {
                    return Err(err(ParseErrorKind::Invalid, span, "Range requires lo < hi"));
                }
                Distribution::Range {
                    lo: lits[0],
                    hi: lits[1],
                }
            }
            "Choice" => {
                if lits.is_empty() {
                    return Err(err(
                        ParseErrorKind::Invalid,
                        span,
                        "Choice requires at least one value",
                    ));
                }
                if lits.iter().any(|l| l.is_int != lits[0].is_int) {
                    return Err(err(
                        ParseErrorKind::TypeMismatch,
                        span,
                        "Choice values must all be integers or all be reals",
                    ));
                }
                Distribution::Choice { values: lits }
            }
            "Constant" => {
                if lits.len() != 1 {
                    return Err(err(
                        ParseErrorKind::Syntax,
                        span,
                        "Constant takes exactly 1 argument",
                    ));
                }
                Distribution::Constant { value: lits[0] }
            }
            other => {
                return Err(err(
                    ParseErrorKind::UnknownIdentifier,
                    span,
                    format!("unknown distribution `{other}`"),
                ))
            }
        };
        Ok(dist)
    }

    fn agent_decl(&mut self) -> Result<AgentDecl, ParseError> {
        let span = self.peek().span;
        let is_ego = self.is_keyword("ego");
        self.bump();
        let (name, _) = self.binding_name("agent name")?;
        self.expect_keyword("on")?;
        let lane = match self.peek().tok.clone() {
            Tok::Str(s) => {
                self.bump();
                s
            }
            _ => return self.unexpected("a quoted lane id"),
        };
        self.expect_keyword("at")?;
        let offset = self.expr()?;
        self.expect_keyword("speed")?;
        let speed = self.expr()?;
        Ok(AgentDecl {
            name,
            is_ego,
            lane,
            offset,
            speed,
            behavior: Vec::new(),
            span,
        })
    }

    fn behavior_decl(&mut self) -> Result<(String, Span, BehaviorStep), ParseError> {
        self.expect_keyword("behavior")?;
        let (agent, aspan) = self.ident("agent name")?;
        self.expect(Tok::Colon, "`:`")?;
        let (step_name, span) = self.ident("a behavior step")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut positional: Vec<Expr> = Vec::new();
        let mut named: Vec<(String, Span, Expr)> = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                let is_named =
                    matches!(self.peek().tok, Tok::Ident(_)) && *self.peek_at(1) == Tok::Assign;
                if is_named {
                    let (n, nspan) = self.ident("argument name")?;
                    self.bump();
                    let e = self.expr()?;
                    named.push((n, nspan, e));
                } else {
                    if !named.is_empty() {
                        return self.unexpected("a named argument");
                    }
                    positional.push(self.expr()?);
                }
                if self.peek().tok == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        let kind = build_step(&step_name, span, positional, named)?;
        let mut for_seconds = None;
        let mut until = None;
        if self.is_keyword("for") {
            self.bump();
            for_seconds = Some(self.expr()?);
        }
        if self.is_keyword("until") {
            self.bump();
            until = Some(self.expr()?);
        }
        Ok((
            agent,
            aspan,
            BehaviorStep {
                kind,
                for_seconds,
                until,
                span,
            },
        ))
    }

    fn predict_decl(&mut self) -> Result<PredictDecl, ParseError> {
        let span = self.expect_keyword("predict")?;
        let (target, _) = self.ident("target agent")?;
        self.expect_keyword("at")?;
        let timepoint = self.expr()?;
        Ok(PredictDecl {
            target,
            timepoint,
            span,
        })
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(err(
                ParseErrorKind::Syntax,
                self.peek().span,
                "expression nested too deeply",
            ));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let r = self.or_expr();
        self.depth -= 1;
        r
    }

    fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        let span = lhs.span();
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            span,
        }
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.is_keyword("or") {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Self::binary(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.not_expr()?;
        while self.is_keyword("and") {
            self.bump();
            let rhs = self.not_expr()?;
            lhs = Self::binary(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ParseError> {
        if self.is_keyword("not") {
            let span = self.bump().span;
            self.enter()?;
            let inner = self.not_expr();
            self.depth -= 1;
            return Ok(Expr::Unary {
                op: UnOp::Not,
                expr: Box::new(inner?),
                span,
            });
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add_expr()?;
        let op = match self.peek().tok {
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add_expr()?;
        if matches!(self.peek().tok, Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge) {
            return Err(err(
                ParseErrorKind::Syntax,
                self.peek().span,
                "comparisons cannot be chained",
            ));
        }
        Ok(Self::binary(op, lhs, rhs))
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Self::binary(op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Self::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek().tok == Tok::Minus {
            let span = self.bump().span;
            self.enter()?;
            let inner = self.unary();
            self.depth -= 1;
            return Ok(Expr::Unary {
                op: UnOp::Neg,
                expr: Box::new(inner?),
                span,
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num { value, is_int } => {
                self.bump();
                Ok(Expr::Num {
                    lit: Literal { value, is_int },
                    span: t.span,
                })
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                match name.as_str() {
                    "true" | "false" => Ok(Expr::Bool {
                        value: name == "true",
                        span: t.span,
                    }),
                    "Range" | "Choice" | "Constant" => {
                        let dist = self.distribution(&name, t.span)?;
                        Ok(Expr::Dist {
                            dist,
                            feature: String::new(),
                            span: t.span,
                        })
                    }
                    _ => {
                        if let Some(func) = Func::from_name(&name) {
                            if self.peek().tok == Tok::LParen {
                                self.bump();
                                let mut args = Vec::new();
                                if self.peek().tok != Tok::RParen {
                                    loop {
                                        args.push(self.expr()?);
                                        if self.peek().tok == Tok::Comma {
                                            self.bump();
                                        } else {
                                            break;
                                        }
                                    }
                                }
                                self.expect(Tok::RParen, "`)`")?;
                                return Ok(Expr::Call {
                                    func,
                                    args,
                                    span: t.span,
                                });
                            }
                        }
                        if RESERVED.contains(&name.as_str()) {
                            return Err(err(
                                ParseErrorKind::Syntax,
                                t.span,
                                format!("unexpected keyword `{name}` in expression"),
                            ));
                        }
                        Ok(Expr::Ident { name, span: t.span })
                    }
                }
            }
            _ => self.unexpected("an expression"),
        }
    }
}

fn build_step(
    name: &str,
    span: Span,
    positional: Vec<Expr>,
    named: Vec<(String, Span, Expr)>,
) -> Result<StepKind, ParseError> {
    let params: &[&str] = match name {
        "FollowLane" => &["target_speed"],
        "LaneChange" => &["direction", "duration"],
        "TurnAtIntersection" => &["maneuver", "target_speed"],
        "StopAndWait" => &["clear_radius"],
        "BrakeOnCollisionRisk" => &["ttc"],
        other => {
            return Err(err(
                ParseErrorKind::UnknownIdentifier,
                span,
                format!("unknown behavior step `{other}`"),
            ))
        }
    };
    if positional.len() > params.len() {
        return Err(err(
            ParseErrorKind::Syntax,
            span,
            format!("{name} takes at most {} arguments", params.len()),
        ));
    }
    let mut slots: BTreeMap<&str, Expr> = BTreeMap::new();
    for (p, e) in params.iter().zip(positional) {
        slots.insert(p, e);
    }
    for (n, nspan, e) in named {
        let Some(p) = params.iter().find(|p| **p == n) else {
            return Err(err(
                ParseErrorKind::Syntax,
                nspan,
                format!("{name} has no argument `{n}`"),
            ));
        };
        if slots.insert(p, e).is_some() {
            return Err(err(
                ParseErrorKind::Syntax,
                nspan,
                format!("argument `{n}` given twice"),
            ));
        }
    }
    let mut take = |p: &str| -> Result<Expr, ParseError> {
        slots.remove(p).ok_or_else(|| {
            err(
                ParseErrorKind::Syntax,
                span,
                format!("{name} is missing argument `{p}`"),
            )
        })
    };
    let word = |e: Expr, allowed: &[&str]| -> Result<String, ParseError> {
        match e {
            Expr::Ident { name, .. } if allowed.contains(&name.as_str()) => Ok(name),
            other => Err(err(
                ParseErrorKind::TypeMismatch,
                other.span(),
                format!("expected one of {}", allowed.join(", ")),
            )),
        }
    };
    Ok(match name {
        "FollowLane" => StepKind::FollowLane {
            target_speed: take("target_speed")?,
        },
        "LaneChange" => {
            let direction = match word(take("direction")?, &["left", "right"])?.as_str() {
                "left" => Direction::Left,
                _ => Direction::Right,
            };
            StepKind::LaneChange {
                direction,
                duration: take("duration")?,
            }
        }
        "TurnAtIntersection" => {
            let maneuver = match word(take("maneuver")?, &["left", "right", "straight"])?.as_str() {
                "left" => Maneuver::Left,
                "right" => Maneuver::Right,
                _ => Maneuver::Straight,
            };
            StepKind::TurnAtIntersection {
                maneuver,
                target_speed: take("target_speed")?,
            }
        }
        "StopAndWait" => StepKind::StopAndWait {
            clear_radius: take("clear_radius")?,
        },
        _ => {
            let ttc = take("ttc").unwrap_or(Expr::Num {
                lit: Literal {
                    value: 2.0,
                    is_int: false,
                },
                span,
            });
            StepKind::BrakeOnCollisionRisk { ttc }
        }
    })
}

// ---------------------------------------------------------------------------
// semantic analysis

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Int,
    Real,
    Bool,
    Agent,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::Int => "integer",
            Ty::Real => "real",
            Ty::Bool => "boolean",
            Ty::Agent => "agent",
        }
    }

    fn numeric(self) -> bool {
        matches!(self, Ty::Int | Ty::Real)
    }
}

struct Scope<'a> {
    params: &'a [ParamDecl],
    agents: &'a [AgentDecl],
}

impl Scope<'_> {
    fn param(&self, name: &str) -> Option<&ParamDecl> {
        self.params.iter().find(|p| p.name == name)
    }

    /// `dynamic` contexts (require/until) may query agent state but may not
    /// contain distributions.
    fn type_of(&self, e: &Expr, dynamic: bool) -> Result<Ty, ParseError> {
        match e {
            Expr::Num { lit, .. } => Ok(if lit.is_int { Ty::Int } else { Ty::Real }),
            Expr::Bool { .. } => Ok(Ty::Bool),
            Expr::Ident { name, span } => {
                if let Some(p) = self.param(name) {
                    Ok(if p.dist.is_int() { Ty::Int } else { Ty::Real })
                } else if self.agents.iter().any(|a| &a.name == name) {
                    Ok(Ty::Agent)
                } else {
                    Err(err(
                        ParseErrorKind::UnknownIdentifier,
                        *span,
                        format!("`{name}` is not a declared param or agent"),
                    ))
                }
            }
            Expr::Dist { dist, span, .. } => {
                if dynamic {
                    return Err(err(
                        ParseErrorKind::Invalid,
                        *span,
                        "distributions are not allowed in conditions",
                    ));
                }
                Ok(if dist.is_int() { Ty::Int } else { Ty::Real })
            }
            Expr::Unary { op, expr, span } => {
                let t = self.type_of(expr, dynamic)?;
                match op {
                    UnOp::Neg if t.numeric() => Ok(t),
                    UnOp::Not if t == Ty::Bool => Ok(Ty::Bool),
                    _ => Err(mismatch(
                        *span,
                        if *op == UnOp::Not {
                            "boolean"
                        } else {
                            "number"
                        },
                        t,
                    )),
                }
            }
            Expr::Binary { op, lhs, rhs, .. } => {
                let (lt, rt) = (self.type_of(lhs, dynamic)?, self.type_of(rhs, dynamic)?);
                match op {
                    BinOp::And | BinOp::Or => {
                        expect_ty(lhs, lt, Ty::Bool)?;
                        expect_ty(rhs, rt, Ty::Bool)?;
                        Ok(Ty::Bool)
                    }
                    _ => {
                        expect_num(lhs, lt)?;
                        expect_num(rhs, rt)?;
                        Ok(if op.is_comparison() {
                            Ty::Bool
                        } else if lt == Ty::Int && rt == Ty::Int && *op != BinOp::Div {
                            Ty::Int
                        } else {
                            Ty::Real
                        })
                    }
                }
            }
            Expr::Call { func, args, span } => {
                if !dynamic {
                    return Err(err(
                        ParseErrorKind::Invalid,
                        *span,
                        format!(
                            "`{}` is only available in require/until conditions",
                            func.name()
                        ),
                    ));
                }
                if args.len() != func.arity() {
                    return Err(err(
                        ParseErrorKind::Syntax,
                        *span,
                        format!("`{}` takes {} argument(s)", func.name(), func.arity()),
                    ));
                }
                for a in args {
                    let t = self.type_of(a, dynamic)?;
                    expect_ty(a, t, Ty::Agent)?;
                }
                Ok(Ty::Real)
            }
        }
    }
}

fn mismatch(span: Span, wanted: &str, got: Ty) -> ParseError {
    err(
        ParseErrorKind::TypeMismatch,
        span,
        format!("expected {wanted}, found {}", got.name()),
    )
}

fn expect_ty(e: &Expr, got: Ty, want: Ty) -> Result<(), ParseError> {
    if got == want {
        Ok(())
    } else {
        Err(mismatch(e.span(), want.name(), got))
    }
}

fn expect_num(e: &Expr, got: Ty) -> Result<(), ParseError> {
    if got.numeric() {
        Ok(())
    } else {
        Err(mismatch(e.span(), "number", got))
    }
}

/// Value of an expression that depends only on literals and constants.
pub(crate) fn static_value(e: &Expr, params: &[ParamDecl]) -> Option<f64> {
    match e {
        Expr::Num { lit, .. } => Some(lit.value),
        Expr::Ident { name, .. } => match &params.iter().find(|p| &p.name == name)?.dist {
            Distribution::Constant { value } => Some(value.value),
            _ => None,
        },
        Expr::Dist {
            dist: Distribution::Constant { value },
            ..
        } => Some(value.value),
        Expr::Unary {
            op: UnOp::Neg,
            expr,
            ..
        } => static_value(expr, params).map(|v| -v),
        Expr::Binary { op, lhs, rhs, .. } => {
            let (a, b) = (static_value(lhs, params)?, static_value(rhs, params)?);
            match op {
                BinOp::Add => Some(a + b),
                BinOp::Sub => Some(a - b),
                BinOp::Mul => Some(a * b),
                BinOp::Div => Some(a / b),
                _ => None,
            }
        }
        _ => None,
    }
}

/// Possible values of a timepoint expression when they can be enumerated.
fn timepoint_support(e: &Expr, params: &[ParamDecl]) -> Option<Vec<f64>> {
    let of_dist = |d: &Distribution| match d {
        Distribution::Choice { values } => Some(values.iter().map(|l| l.value).collect()),
        Distribution::Constant { value } => Some(alloc::vec![value.value]),
        Distribution::Range { .. } => None,
    };
    match e {
        Expr::Ident { name, .. } => of_dist(&params.iter().find(|p| &p.name == name)?.dist),
        Expr::Dist { dist, .. } => of_dist(dist),
        _ => static_value(e, params).map(|v| alloc::vec![v]),
    }
}

fn hoist(e: &mut Expr, base: &str, counter: &mut usize) {
    match e {
        Expr::Dist { feature, .. } => {
            *counter += 1;
            *feature = if *counter == 1 {
                base.to_string()
            } else {
                format!("{base}#{counter}")
            };
        }
        Expr::Unary { expr, .. } => hoist(expr, base, counter),
        Expr::Binary { lhs, rhs, .. } => {
            hoist(lhs, base, counter);
            hoist(rhs, base, counter);
        }
        Expr::Call { args, .. } => args.iter_mut().for_each(|a| hoist(a, base, counter)),
        Expr::Num { .. } | Expr::Bool { .. } | Expr::Ident { .. } => {}
    }
}

fn hoist_expr(e: &mut Expr, base: String) {
    let mut counter = 0;
    hoist(e, &base, &mut counter);
}

/// Map arguments accepted by each builder, with defaults.
pub(crate) fn builder_params(
    builder: &str,
) -> Option<&'static [(&'static str, Option<f64>, bool)]> {
    // (name, default, integer)
    match builder {
        "straight" => Some(&[
            ("lanes", Some(1.0), true),
            ("length", Some(200.0), false),
            ("lane_width", Some(3.5), false),
        ]),
        "intersection" => Some(&[
            ("arms", None, true),
            ("arm_length", Some(60.0), false),
            ("lane_width", Some(3.5), false),
        ]),
        _ => None,
    }
}

pub(crate) fn map_spec(builder: &str, values: &BTreeMap<&str, f64>) -> Result<MapSpec, String> {
    let get = |k: &str| -> Result<f64, String> {
        values
            .get(k)
            .copied()
            .ok_or_else(|| format!("missing map argument `{k}`"))
    };
    let count = |k: &str| -> Result<u32, String> {
        let v = get(k)?;
        if v != libm::trunc(v) || !(1.0..=64.0).contains(&v) {
            return Err(format!(
                "map argument `{k}` must be a small positive integer, got {v}"
            ));
        }
        Ok(v as u32)
    };
    match builder {
        "straight" => Ok(MapSpec::Straight {
            n_lanes: count("lanes")?,
            length: get("length")?,
            lane_width: get("lane_width")?,
        }),
        "intersection" => Ok(MapSpec::Intersection {
            arms: count("arms")?,
            arm_length: get("arm_length")?,
            lane_width: get("lane_width")?,
        }),
        other => Err(format!("unknown map builder `{other}`")),
    }
}

fn assemble(id: &str, raw: RawProgram) -> Result<ScenarioProgram, ParseError> {
    let RawProgram {
        mut maps,
        params,
        mut agents,
        behaviors,
        mut predicts,
        requirements,
    } = raw;
    let origin = Span { line: 1, col: 1 };

    if maps.len() > 1 {
        return Err(err(
            ParseErrorKind::Invalid,
            maps[1].span,
            "more than one map declaration",
        ));
    }
    let mut map = maps
        .pop()
        .ok_or_else(|| err(ParseErrorKind::MissingMap, origin, "no `map` declaration"))?;
    if predicts.len() > 1 {
        return Err(err(
            ParseErrorKind::Invalid,
            predicts[1].span,
            "more than one predict declaration",
        ));
    }
    let mut predict = predicts.pop().ok_or_else(|| {
        err(
            ParseErrorKind::MissingPredict,
            origin,
            "no `predict` declaration",
        )
    })?;

    // names
    for (i, p) in params.iter().enumerate() {
        if params[..i].iter().any(|q| q.name == p.name) {
            return Err(err(
                ParseErrorKind::DuplicateFeature,
                p.span,
                format!("param `{}` declared twice", p.name),
            ));
        }
    }
    for (i, a) in agents.iter().enumerate() {
        if agents[..i].iter().any(|b| b.name == a.name) {
            return Err(err(
                ParseErrorKind::DuplicateAgent,
                a.span,
                format!("agent `{}` declared twice", a.name),
            ));
        }
        if params.iter().any(|p| p.name == a.name) {
            return Err(err(
                ParseErrorKind::DuplicateAgent,
                a.span,
                format!("`{}` is already a param", a.name),
            ));
        }
    }
    let egos: Vec<&AgentDecl> = agents.iter().filter(|a| a.is_ego).collect();
    match egos.len() {
        0 => {
            return Err(err(
                ParseErrorKind::MissingEgo,
                origin,
                "no agent is declared `ego`",
            ))
        }
        1 => {}
        _ => {
            return Err(err(
                ParseErrorKind::Invalid,
                egos[1].span,
                "more than one ego agent",
            ))
        }
    }

    for (agent, span, step) in behaviors {
        let Some(a) = agents.iter_mut().find(|a| a.name == agent) else {
            return Err(err(
                ParseErrorKind::UnknownIdentifier,
                span,
                format!("behavior for undeclared agent `{agent}`"),
            ));
        };
        a.behavior.push(step);
    }
    for a in &agents {
        if a.behavior.is_empty() {
            return Err(err(
                ParseErrorKind::Invalid,
                a.span,
                format!("agent `{}` has no behavior", a.name),
            ));
        }
    }
    if !agents.iter().any(|a| a.name == predict.target) {
        return Err(err(
            ParseErrorKind::UnknownIdentifier,
            predict.span,
            format!("predict target `{}` is not an agent", predict.target),
        ));
    }

    // hoist inline distributions into named features
    for (name, e) in map.args.iter_mut() {
        hoist_expr(e, format!("map.{name}"));
    }
    for (i, a) in agents.iter_mut().enumerate() {
        hoist_expr(&mut a.offset, format!("agent{i}.init.offset"));
        hoist_expr(&mut a.speed, format!("agent{i}.init.speed"));
        for (j, step) in a.behavior.iter_mut().enumerate() {
            for (arg, e) in step.kind.numeric_args_mut() {
                hoist_expr(e, format!("agent{i}.behavior{j}.{arg}"));
            }
            if let Some(e) = step.for_seconds.as_mut() {
                hoist_expr(e, format!("agent{i}.behavior{j}.for"));
            }
        }
    }
    hoist_expr(&mut predict.timepoint, "predict.timepoint".into());

    // types
    let scope = Scope {
        params: &params,
        agents: &agents,
    };
    let Some(bparams) = builder_params(&map.builder) else {
        return Err(err(
            ParseErrorKind::UnknownIdentifier,
            map.span,
            format!("unknown map builder `{}`", map.builder),
        ));
    };
    for (i, (name, e)) in map.args.iter().enumerate() {
        let Some(&(_, _, is_int)) = bparams.iter().find(|p| p.0 == name) else {
            return Err(err(
                ParseErrorKind::Invalid,
                e.span(),
                format!("map `{}` has no argument `{name}`", map.builder),
            ));
        };
        if map.args[..i].iter().any(|(n, _)| n == name) {
            return Err(err(
                ParseErrorKind::Invalid,
                e.span(),
                format!("map argument `{name}` given twice"),
            ));
        }
        let t = scope.type_of(e, false)?;
        if is_int {
            expect_ty(e, t, Ty::Int)?;
        } else {
            expect_num(e, t)?;
        }
    }
    for a in &agents {
        let t = scope.type_of(&a.offset, false)?;
        expect_num(&a.offset, t)?;
        let t = scope.type_of(&a.speed, false)?;
        expect_num(&a.speed, t)?;
        for step in &a.behavior {
            for (arg, e) in step.kind.numeric_args() {
                let t = scope.type_of(e, false)?;
                expect_num(e, t)?;
                if let Some(v) = static_value(e, &params) {
                    if !(v > 0.0) {
                        return Err(err(
                            ParseErrorKind::Invalid,
                            e.span(),
                            format!("`{arg}` must be positive, got {v}"),
                        ));
                    }
                }
            }
            if let Some(e) = &step.for_seconds {
                let t = scope.type_of(e, false)?;
                expect_num(e, t)?;
            }
            if let Some(e) = &step.until {
                let t = scope.type_of(e, true)?;
                expect_ty(e, t, Ty::Bool)?;
            }
        }
    }
    for r in &requirements {
        let t = scope.type_of(r, true)?;
        expect_ty(r, t, Ty::Bool)?;
    }
    let t = scope.type_of(&predict.timepoint, false)?;
    expect_ty(&predict.timepoint, t, Ty::Int)?;
    if let Some(values) = timepoint_support(&predict.timepoint, &params) {
        if let Some(v) = values.iter().find(|v| **v < HISTORY_STEPS as f64) {
            return Err(err(
                ParseErrorKind::Invalid,
                predict.timepoint.span(),
                format!("timepoint must be at least {HISTORY_STEPS}, got {v}"),
            ));
        }
    }

    // lane references, when the map is fully static
    let mut values = BTreeMap::new();
    let mut all_static = true;
    for &(name, default, _) in bparams {
        match map.args.iter().find(|(n, _)| n == name) {
            Some((_, e)) => match static_value(e, &params) {
                Some(v) => {
                    values.insert(name, v);
                }
                None => all_static = false,
            },
            None => {
                if let Some(d) = default {
                    values.insert(name, d);
                }
            }
        }
    }
    if all_static {
        let spec = map_spec(&map.builder, &values)
            .map_err(|m| err(ParseErrorKind::Invalid, map.span, m))?;
        let net = spec
            .build()
            .map_err(|e| err(ParseErrorKind::Invalid, map.span, e.to_string()))?;
        for a in &agents {
            if net.lane_by_name(&a.lane).is_none() {
                return Err(err(
                    ParseErrorKind::UnknownIdentifier,
                    a.span,
                    format!(
                        "lane `{}` does not exist in the {} map",
                        a.lane, map.builder
                    ),
                ));
            }
        }
    }

    Ok(ScenarioProgram {
        id: id.to_string(),
        map,
        params,
        agents,
        predict,
        requirements,
    })
}
