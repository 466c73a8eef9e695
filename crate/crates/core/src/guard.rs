//! Guard expressions over place markings.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! Or    := And ('OR' And)*
//! And   := Unary ('AND' Unary)*
//! Unary := 'NOT' Unary | '(' Or ')' | '#' id relop int
//! relop := '>' | '>=' | '=' | '<' | '<='
//! ```

use std::fmt;

use crate::net::Marking;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GuardError {
    #[error("guard syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("guard references unknown place `{0}`")]
    UnknownPlace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelOp {
    Gt,
    Ge,
    Eq,
    Lt,
    Le,
}

impl RelOp {
    fn holds(self, lhs: u32, rhs: u32) -> bool {
        match self {
            RelOp::Gt => lhs > rhs,
            RelOp::Ge => lhs >= rhs,
            RelOp::Eq => lhs == rhs,
            RelOp::Lt => lhs < rhs,
            RelOp::Le => lhs <= rhs,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            RelOp::Gt => ">",
            RelOp::Ge => ">=",
            RelOp::Eq => "=",
            RelOp::Lt => "<",
            RelOp::Le => "<=",
        }
    }
}

/// A resolved guard expression. Atoms carry both the place index used for
/// evaluation and the place id used for printing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GuardExpr {
    Atom {
        place: usize,
        name: String,
        op: RelOp,
        value: u32,
    },
    Not(Box<GuardExpr>),
    And(Box<GuardExpr>, Box<GuardExpr>),
    Or(Box<GuardExpr>, Box<GuardExpr>),
}

impl GuardExpr {
    pub fn eval(&self, m: &Marking) -> bool {
        self.eval_tokens(m.tokens())
    }

    pub(crate) fn eval_tokens(&self, tokens: &[u32]) -> bool {
        match self {
            GuardExpr::Atom {
                place, op, value, ..
            } => op.holds(tokens[*place], *value),
            GuardExpr::Not(e) => !e.eval_tokens(tokens),
            GuardExpr::And(a, b) => a.eval_tokens(tokens) && b.eval_tokens(tokens),
            GuardExpr::Or(a, b) => a.eval_tokens(tokens) || b.eval_tokens(tokens),
        }
    }

    /// Place indices referenced by this expression.
    pub fn places(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_places(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// The same predicate evaluated on `m - offset`: `#P op c` becomes
    /// `#P op c + offset(P)`.
    pub fn shifted(&self, offset: &impl Fn(usize) -> u32) -> GuardExpr {
        match self {
            GuardExpr::Atom {
                place,
                name,
                op,
                value,
            } => GuardExpr::Atom {
                place: *place,
                name: name.clone(),
                op: *op,
                value: value + offset(*place),
            },
            GuardExpr::Not(e) => GuardExpr::Not(Box::new(e.shifted(offset))),
            GuardExpr::And(a, b) => {
                GuardExpr::And(Box::new(a.shifted(offset)), Box::new(b.shifted(offset)))
            }
            GuardExpr::Or(a, b) => {
                GuardExpr::Or(Box::new(a.shifted(offset)), Box::new(b.shifted(offset)))
            }
        }
    }

    fn collect_places(&self, out: &mut Vec<usize>) {
        match self {
            GuardExpr::Atom { place, .. } => out.push(*place),
            GuardExpr::Not(e) => e.collect_places(out),
            GuardExpr::And(a, b) | GuardExpr::Or(a, b) => {
                a.collect_places(out);
                b.collect_places(out);
            }
        }
    }
}

/// Fully parenthesised rendering; reparses to an identical tree.
impl fmt::Display for GuardExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuardExpr::Atom {
                name, op, value, ..
            } => write!(f, "#{}{}{}", name, op.as_str(), value),
            GuardExpr::Not(e) => write!(f, "NOT ({e})"),
            GuardExpr::And(a, b) => write!(f, "({a}) AND ({b})"),
            GuardExpr::Or(a, b) => write!(f, "({a}) OR ({b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Hash,
    Ident(String),
    Int(u32),
    Op(RelOp),
    LParen,
    RParen,
    And,
    Or,
    Not,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, GuardError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'#' => {
                out.push((start, Tok::Hash));
                i += 1;
            }
            b'(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            b'>' | b'<' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, eq) {
                    (b'>', false) => RelOp::Gt,
                    (b'>', true) => RelOp::Ge,
                    (b'<', false) => RelOp::Lt,
                    _ => RelOp::Le,
                };
                out.push((start, Tok::Op(op)));
                i += if eq { 2 } else { 1 };
            }
            b'=' => {
                // accept `==` as an alias for `=`
                i += if bytes.get(i + 1) == Some(&b'=') {
                    2
                } else {
                    1
                };
                out.push((start, Tok::Op(RelOp::Eq)));
            }
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let value = text[start..i]
                    .parse::<u32>()
                    .map_err(|_| GuardError::Syntax {
                        pos: start,
                        msg: "integer literal out of range".into(),
                    })?;
                out.push((start, Tok::Int(value)));
            }
            c if c == b'_' || c.is_ascii_alphabetic() => {
                while i < bytes.len() && (bytes[i] == b'_' || bytes[i].is_ascii_alphanumeric()) {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word.to_ascii_uppercase().as_str() {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    _ => Tok::Ident(word.to_string()),
                };
                out.push((start, tok));
            }
            _ => {
                return Err(GuardError::Syntax {
                    pos: start,
                    msg: format!(
                        "unexpected character `{}`",
                        text[start..].chars().next().unwrap()
                    ),
                })
            }
        }
    }
    Ok(out)
}

struct Parser<'a, F> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    resolve: &'a F,
}

impl<F> Parser<'_, F>
where
    F: Fn(&str) -> Option<usize>,
{
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, GuardError> {
        Err(GuardError::Syntax {
            pos: self.offset(),
            msg: msg.into(),
        })
    }

    fn or(&mut self) -> Result<GuardExpr, GuardError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = GuardExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<GuardExpr, GuardError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = GuardExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<GuardExpr, GuardError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(GuardExpr::Not(Box::new(self.unary()?)))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.or()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Tok::Hash) => {
                self.pos += 1;
                let name = match self.peek() {
                    Some(Tok::Ident(n)) => n.clone(),
                    _ => return self.err("expected place id after `#`"),
                };
                self.pos += 1;
                let op = match self.peek() {
                    Some(Tok::Op(op)) => *op,
                    _ => return self.err("expected relational operator"),
                };
                self.pos += 1;
                let value = match self.peek() {
                    Some(Tok::Int(v)) => *v,
                    _ => return self.err("expected integer constant"),
                };
                self.pos += 1;
                let place = (self.resolve)(&name).ok_or(GuardError::UnknownPlace(name.clone()))?;
                Ok(GuardExpr::Atom {
                    place,
                    name,
                    op,
                    value,
                })
            }
            Some(_) => self.err("expected `#place`, `(` or `NOT`"),
            None => self.err("unexpected end of expression"),
        }
    }
}

/// Parse `text`, resolving place ids through `resolve`.
pub fn parse_with<F>(text: &str, resolve: &F) -> Result<GuardExpr, GuardError>
where
    F: Fn(&str) -> Option<usize>,
{
    if text.trim().is_empty() {
        return Err(GuardError::Syntax {
            pos: 0,
            msg: "empty guard".into(),
        });
    }
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        resolve,
    };
    let expr = p.or()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(expr)
}
