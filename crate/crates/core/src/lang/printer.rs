//! Canonical source rendering; `parse(print(p))` is structurally equal to `p`.

use core::fmt::{self, Write};

use super::ast::*;

fn literal(f: &mut fmt::Formatter<'_>, lit: &Literal) -> fmt::Result {
    if lit.is_int {
        write!(f, "{}", lit.value)
    } else {
        write!(f, "{:?}", lit.value)
    }
}

fn distribution(f: &mut fmt::Formatter<'_>, d: &Distribution) -> fmt::Result {
    match d {
        Distribution::Range { lo, hi } => {
            f.write_str("Range(")?;
            literal(f, lo)?;
            f.write_str(", ")?;
            literal(f, hi)?;
        }
        Distribution::Choice { values } => {
            f.write_str("Choice(")?;
            for (i, v) in values.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                literal(f, v)?;
            }
        }
        Distribution::Constant { value } => {
            f.write_str("Constant(")?;
            literal(f, value)?;
        }
    }
    f.write_char(')')
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { op: UnOp::Not, .. } => 3,
        Expr::Unary { op: UnOp::Neg, .. } => 7,
        _ => 8,
    }
}

fn expr_at(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if precedence(e) < min_prec {
        f.write_char('(')?;
        expr(f, e)?;
        f.write_char(')')
    } else {
        expr(f, e)
    }
}

fn expr(f: &mut fmt::Formatter<'_>, e: &Expr) -> fmt::Result {
    match e {
        Expr::Num { lit, .. } => literal(f, lit),
        Expr::Bool { value, .. } => write!(f, "{value}"),
        Expr::Ident { name, .. } => f.write_str(name),
        Expr::Unary {
            op: UnOp::Neg,
            expr: inner,
            ..
        } => {
            f.write_char('-')?;
            expr_at(f, inner, 7)
        }
        Expr::Unary {
            op: UnOp::Not,
            expr: inner,
            ..
        } => {
            f.write_str("not ")?;
            expr_at(f, inner, 3)
        }
        Expr::Binary { op, lhs, rhs, .. } => {
            let p = op.precedence();
            let lhs_min = if op.is_comparison() { p + 1 } else { p };
            expr_at(f, lhs, lhs_min)?;
            write!(f, " {} ", op.symbol())?;
            expr_at(f, rhs, p + 1)
        }
        Expr::Call { func, args, .. } => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                expr(f, a)?;
            }
            f.write_char(')')
        }
        Expr::Dist { dist, .. } => distribution(f, dist),
    }
}

/// Display adapter for a single expression.
pub struct ExprDisplay<'a>(pub &'a Expr);

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        expr(f, self.0)
    }
}

fn step(f: &mut fmt::Formatter<'_>, s: &BehaviorStep) -> fmt::Result {
    write!(f, "{}(", s.kind.name())?;
    match &s.kind {
        StepKind::LaneChange { direction, .. } => {
            f.write_str(match direction {
                Direction::Left => "left, ",
                Direction::Right => "right, ",
            })?;
        }
        StepKind::TurnAtIntersection { maneuver, .. } => write!(f, "{}, ", maneuver.as_str())?,
        _ => {}
    }
    for (i, (name, e)) in s.kind.numeric_args().into_iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{name} = ")?;
        expr(f, e)?;
    }
    f.write_char(')')?;
    if let Some(e) = &s.for_seconds {
        f.write_str(" for ")?;
        expr(f, e)?;
    }
    if let Some(e) = &s.until {
        f.write_str(" until ")?;
        expr(f, e)?;
    }
    Ok(())
}

impl fmt::Display for ScenarioProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "map {}(", self.map.builder)?;
        for (i, (name, e)) in self.map.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name} = ")?;
            expr(f, e)?;
        }
        f.write_str(")\n")?;
        for p in &self.params {
            write!(f, "param {} = ", p.name)?;
            distribution(f, &p.dist)?;
            f.write_char('\n')?;
        }
        for a in &self.agents {
            write!(
                f,
                "{} {} on \"",
                if a.is_ego { "ego" } else { "agent" },
                a.name
            )?;
            for c in a.lane.chars() {
                if c == '"' || c == '\\' {
                    f.write_char('\\')?;
                }
                f.write_char(c)?;
            }
            f.write_str("\" at ")?;
            expr(f, &a.offset)?;
            f.write_str(" speed ")?;
            expr(f, &a.speed)?;
            f.write_char('\n')?;
        }
        for a in &self.agents {
            for s in &a.behavior {
                write!(f, "behavior {}: ", a.name)?;
                step(f, s)?;
                f.write_char('\n')?;
            }
        }
        write!(f, "predict {} at ", self.predict.target)?;
        expr(f, &self.predict.timepoint)?;
        f.write_char('\n')?;
        for r in &self.requirements {
            f.write_str("require ")?;
            expr(f, r)?;
            f.write_char('\n')?;
        }
        Ok(())
    }
}
