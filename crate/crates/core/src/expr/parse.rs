//! Recursive-descent parser for the expression grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | '(' expr ')' | ident '(' expr [',' expr] ')' | atom
//! atom   := 'x' digits | 'th' digits | decimal-literal
//! ```
//!
//! Positions in error messages are 1-based character offsets.

use super::{parse_param_name, ExprTree, Node, Operator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn syntax(pos: usize, msg: impl Into<String>) -> Error {
    Error::Syntax { pos, msg: msg.into() }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '(' => toks.push((Tok::LParen, pos)),
            ')' => toks.push((Tok::RParen, pos)),
            ',' => toks.push((Tok::Comma, pos)),
            '+' => toks.push((Tok::Plus, pos)),
            '-' | '\u{2212}' => toks.push((Tok::Minus, pos)),
            '*' | '\u{d7}' => toks.push((Tok::Star, pos)),
            '/' => toks.push((Tok::Slash, pos)),
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit: String = chars[start..i].iter().collect();
                let v: f64 = lit
                    .parse()
                    .map_err(|_| syntax(pos, format!("malformed number `{lit}`")))?;
                if !v.is_finite() {
                    return Err(syntax(pos, format!("number `{lit}` is not finite")));
                }
                toks.push((Tok::Num(v), pos));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                toks.push((Tok::Ident(chars[start..i].iter().collect()), pos));
                continue;
            }
            other => return Err(syntax(pos, format!("unexpected character `{other}`"))),
        }
        i += 1;
    }
    toks.push((Tok::Eof, chars.len() + 1));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    n_features: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(syntax(
                self.pos(),
                format!("expected {}, found {}", want.describe(), self.peek().describe()),
            ))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => Operator::Add,
                Tok::Minus => Operator::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Node::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => Operator::Mul,
                Tok::Slash => Operator::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Node::binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Node> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Minus => {
                if let Tok::Num(v) = *self.peek() {
                    self.bump();
                    Ok(Node::Const(-v))
                } else {
                    Ok(Node::unary(Operator::Neg, self.factor()?))
                }
            }
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Num(v) => Ok(Node::Const(v)),
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    return self.call(&name, pos);
                }
                self.atom(&name, pos)
            }
            other => Err(syntax(pos, format!("unexpected {}", other.describe()))),
        }
    }

    fn call(&mut self, name: &str, pos: usize) -> Result<Node> {
        let op = match Operator::from_symbol(name) {
            Some(op) if !op.is_infix() => op,
            _ => return Err(Error::UnknownOperator(name.to_string())),
        };
        self.expect(Tok::LParen)?;
        let first = self.expr()?;
        let node = if op.arity() == 2 {
            if *self.peek() != Tok::Comma {
                return Err(syntax(
                    self.pos(),
                    format!("`{name}` at position {pos} takes two arguments"),
                ));
            }
            self.bump();
            let second = self.expr()?;
            Node::binary(op, first, second)
        } else {
            Node::unary(op, first)
        };
        self.expect(Tok::RParen)?;
        Ok(node)
    }

    fn atom(&mut self, name: &str, pos: usize) -> Result<Node> {
        if let Some(id) = parse_param_name(name) {
            return Ok(Node::Param(id));
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = digits
                    .parse()
                    .map_err(|_| syntax(pos, format!("variable index `{digits}` too large")))?;
                if index >= self.n_features {
                    return Err(Error::VariableOutOfRange { index, n_features: self.n_features });
                }
                return Ok(Node::Var(index));
            }
        }
        Err(syntax(pos, format!("unknown identifier `{name}`")))
    }
}

/// Parses `text` into a tree whose variables index fewer than `n_features`
/// columns.
pub fn parse_expression(text: &str, n_features: usize) -> Result<ExprTree> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, at: 0, n_features };
    let root = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(syntax(p.pos(), format!("unexpected {}", p.peek().describe())));
    }
    Ok(ExprTree::new(root))
}
