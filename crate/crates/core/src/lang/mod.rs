//! The `.tsc` scenario language: a small line-oriented probabilistic
//! language for abstract driving scenarios.
//!
//! A program declares one parametric map, sampleable params, agents with
//! initial states and ordered behavior steps, the agent whose future is to
//! be predicted and the timepoint at which prediction starts, plus
//! boolean requirements over the initial state. See `docs/grammar.md`
//! for the full EBNF.

mod ast;
mod concrete;
mod error;
mod lexer;
mod parser;
mod printer;

pub use ast::*;
pub use concrete::{
    check_assignment, concretize, feature_space, timepoint_feature, Action, AgentView,
    ConcreteAgent, ConcreteScenario, ConcreteStep, Concretized, Cond, Feature, NumExpr,
};
pub use error::{ConcretizeError, ParseError, ParseErrorKind};
pub use parser::{parse, parse_bytes, parse_with_id, RESERVED};
pub use printer::ExprDisplay;

#[cfg(test)]
mod tests;
