use alloc::string::String;
use core::fmt;

use thiserror::Error;

use super::ast::Span;
use crate::road::RoadError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Lexical,
    Syntax,
    UnknownIdentifier,
    TypeMismatch,
    DuplicateFeature,
    DuplicateAgent,
    MissingEgo,
    MissingPredict,
    MissingMap,
    /// Any other violated program invariant.
    Invalid,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseErrorKind::Lexical => "lexical error",
            ParseErrorKind::Syntax => "syntax error",
            ParseErrorKind::UnknownIdentifier => "unknown identifier",
            ParseErrorKind::TypeMismatch => "type mismatch",
            ParseErrorKind::DuplicateFeature => "duplicate feature",
            ParseErrorKind::DuplicateAgent => "duplicate agent",
            ParseErrorKind::MissingEgo => "missing ego",
            ParseErrorKind::MissingPredict => "missing predict",
            ParseErrorKind::MissingMap => "missing map",
            ParseErrorKind::Invalid => "invalid program",
        })
    }
}

/// A diagnostic with 1-based line and column.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{col}: {kind}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl ParseError {
    pub fn new(kind: ParseErrorKind, span: Span, message: String) -> Self {
        ParseError {
            kind,
            line: span.line,
            col: span.col,
            message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConcretizeError {
    #[error("assignment is missing feature `{0}`")]
    MissingFeature(String),
    #[error("assignment has unknown feature `{0}`")]
    ExtraFeature(String),
    #[error("value {value} is outside the support of `{name}`")]
    OutOfSupport { name: String, value: f64 },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: String, value: f64 },
    #[error("{what} evaluated to a non-finite value")]
    NonFinite { what: String },
    #[error("{what}: {reason}")]
    InvalidValue { what: String, reason: String },
    #[error("map: {0}")]
    Map(#[from] RoadError),
}
