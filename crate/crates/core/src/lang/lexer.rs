use alloc::string::String;
use alloc::vec::Vec;

use super::ast::Span;
use super::error::{ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Num { value: f64, is_int: bool },
    Str(String),
    LParen,
    RParen,
    Comma,
    Colon,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Le,
    Gt,
    Ge,
    Newline,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

/// Splits source text into tokens. Newlines are significant except inside
/// parentheses, which lets long argument lists wrap.
pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    let (mut line, mut col) = (1u32, 1u32);
    let mut depth = 0usize;

    macro_rules! lex_err {
        ($span:expr, $($arg:tt)*) => {
            return Err(ParseError::new(ParseErrorKind::Lexical, $span, alloc::format!($($arg)*)))
        };
    }

    while let Some(&(start, c)) = chars.peek() {
        let span = Span { line, col };
        match c {
            '\n' => {
                chars.next();
                if depth == 0 {
                    out.push(Token {
                        tok: Tok::Newline,
                        span,
                    });
                }
                line += 1;
                col = 1;
                continue;
            }
            ' ' | '\t' | '\r' => {
                chars.next();
                col += 1;
                continue;
            }
            '#' => {
                while let Some(&(_, c)) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
                continue;
            }
            _ => {}
        }

        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let mut end = start;
            while let Some(&(i, c)) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    end = i + c.len_utf8();
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            Tok::Ident(String::from(&src[start..end]))
        } else if c.is_ascii_digit()
            || (c == '.' && src[start + 1..].starts_with(|d: char| d.is_ascii_digit()))
        {
            let mut end = start;
            let mut is_int = true;
            let mut prev = ' ';
            while let Some(&(i, c)) = chars.peek() {
                let exp_sign = (c == '+' || c == '-') && (prev == 'e' || prev == 'E');
                if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                    if !c.is_ascii_digit() {
                        is_int = false;
                    }
                    end = i + 1;
                    prev = c;
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            let text = &src[start..end];
            match text.parse::<f64>() {
                Ok(value) if value.is_finite() => Tok::Num { value, is_int },
                _ => lex_err!(span, "malformed number `{text}`"),
            }
        } else if c == '"' {
            chars.next();
            col += 1;
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some((_, '"')) => {
                        col += 1;
                        break;
                    }
                    Some((_, '\\')) => {
                        col += 1;
                        match chars.next() {
                            Some((_, e @ ('"' | '\\'))) => {
                                s.push(e);
                                col += 1;
                            }
                            _ => lex_err!(span, "invalid escape in string"),
                        }
                    }
                    Some((_, '\n')) | None => lex_err!(span, "unterminated string"),
                    Some((_, c)) => {
                        s.push(c);
                        col += 1;
                    }
                }
            }
            out.push(Token {
                tok: Tok::Str(s),
                span,
            });
            continue;
        } else {
            chars.next();
            col += 1;
            let two = |chars: &mut core::iter::Peekable<core::str::CharIndices<'_>>,
                       col: &mut u32| {
                if matches!(chars.peek(), Some(&(_, '='))) {
                    chars.next();
                    *col += 1;
                    true
                } else {
                    false
                }
            };
            match c {
                '(' => {
                    depth += 1;
                    Tok::LParen
                }
                ')' => {
                    depth = depth.saturating_sub(1);
                    Tok::RParen
                }
                ',' => Tok::Comma,
                ':' => Tok::Colon,
                '=' => Tok::Assign,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                '<' => {
                    if two(&mut chars, &mut col) {
                        Tok::Le
                    } else {
                        Tok::Lt
                    }
                }
                '>' => {
                    if two(&mut chars, &mut col) {
                        Tok::Ge
                    } else {
                        Tok::Gt
                    }
                }
                other => lex_err!(span, "unexpected character {other:?}"),
            }
        };
        out.push(Token { tok, span });
    }
    out.push(Token {
        tok: Tok::Newline,
        span: Span { line, col },
    });
    out.push(Token {
        tok: Tok::Eof,
        span: Span { line, col },
    });
    Ok(out)
}
