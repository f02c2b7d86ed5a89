//! Recursive-descent parser for the expression grammar.
//!
//! Precedence, tightest first: integer power, unary minus, `* /`, `+ -`.
//! Whitespace is insignificant. Errors carry the byte offset of the
//! offending token.

use std::sync::Arc;

use super::{simplify, ExprError, Expression, Node};

/// Parses `text` into an expression over `n` state variables `x1..xn`.
pub fn parse_expression(text: &str, n: usize) -> Result<Expression, ExprError> {
    let tokens = lex(text)?;
    let mut parser = Parser { tokens, pos: 0, n };
    let node = parser.expr()?;
    match parser.peek() {
        Token::End => Ok(Expression::from_node(simplify(node), n)),
        t => Err(ExprError::Syntax {
            offset: parser.offset(),
            message: format!("unexpected {}", t.describe()),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Number(v) => format!("number `{v}`"),
            Token::Ident(s) => format!("identifier `{s}`"),
            Token::Plus => "token `+`".into(),
            Token::Minus => "token `-`".into(),
            Token::Star => "token `*`".into(),
            Token::Slash => "token `/`".into(),
            Token::Caret => "token `^`".into(),
            Token::LParen => "token `(`".into(),
            Token::RParen => "token `)`".into(),
            Token::End => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    if text.trim().is_empty() {
        return Err(ExprError::Syntax { offset: 0, message: "empty expression".into() });
    }
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => { out.push((Token::Plus, i)); i += 1 }
            b'-' => { out.push((Token::Minus, i)); i += 1 }
            b'*' => { out.push((Token::Star, i)); i += 1 }
            b'/' => { out.push((Token::Slash, i)); i += 1 }
            b'^' => { out.push((Token::Caret, i)); i += 1 }
            b'(' => { out.push((Token::LParen, i)); i += 1 }
            b')' => { out.push((Token::RParen, i)); i += 1 }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i], b'0'..=b'9' | b'.') {
                    i += 1;
                }
                // Exponent suffix such as 1.5e-3.
                if i < bytes.len()
                    && (bytes[i] == b'e' || bytes[i] == b'E')
                    && i + 1 < bytes.len()
                    && (bytes[i + 1].is_ascii_digit() || bytes[i + 1] == b'+' || bytes[i + 1] == b'-')
                {
                    i += 2;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number `{s}`"),
                })?;
                out.push((Token::Number(v), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Token::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(ExprError::Syntax {
                    offset: i,
                    message: format!("unexpected character `{}`", text[i..].chars().next().unwrap()),
                })
            }
        }
    }
    out.push((Token::End, text.len()));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    n: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos].0
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].0.clone();
        self.pos += 1;
        t
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Arc<Node>, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Token::Plus => {
                    self.bump();
                    lhs = Arc::new(Node::Add(lhs, self.term()?));
                }
                Token::Minus => {
                    self.bump();
                    lhs = Arc::new(Node::Sub(lhs, self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Arc<Node>, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Token::Star => {
                    self.bump();
                    lhs = Arc::new(Node::Mul(lhs, self.unary()?));
                }
                Token::Slash => {
                    self.bump();
                    lhs = Arc::new(Node::Div(lhs, self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Arc<Node>, ExprError> {
        if matches!(self.peek(), Token::Minus) {
            self.bump();
            return Ok(Arc::new(Node::Neg(self.unary()?)));
        }
        self.power()
    }

    // power := atom ('^' integer)?   -- binds tighter than unary minus
    fn power(&mut self) -> Result<Arc<Node>, ExprError> {
        let base = self.atom()?;
        if matches!(self.peek(), Token::Caret) {
            self.bump();
            let off = self.offset();
            match self.bump() {
                Token::Number(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => {
                    Ok(Arc::new(Node::Pow(base, v as u32)))
                }
                t => Err(ExprError::Syntax {
                    offset: off,
                    message: format!("expected non-negative integer exponent, found {}", t.describe()),
                }),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Arc<Node>, ExprError> {
        let off = self.offset();
        match self.bump() {
            Token::Number(v) => Ok(Arc::new(Node::Const(v))),
            Token::LParen => {
                let inner = self.expr()?;
                match self.bump() {
                    Token::RParen => Ok(inner),
                    t => Err(ExprError::Syntax {
                        offset: self.tokens[self.pos - 1].1,
                        message: format!("expected `)`, found {}", t.describe()),
                    }),
                }
            }
            Token::Ident(name) => self.ident(name, off),
            t => Err(ExprError::Syntax {
                offset: off,
                message: format!("expected expression, found {}", t.describe()),
            }),
        }
    }

    fn ident(&mut self, name: String, off: usize) -> Result<Arc<Node>, ExprError> {
        match name.as_str() {
            "sin" | "cos" | "exp" | "tanh" => {
                match self.bump() {
                    Token::LParen => {}
                    t => {
                        return Err(ExprError::Syntax {
                            offset: self.tokens[self.pos - 1].1,
                            message: format!("expected `(` after `{name}`, found {}", t.describe()),
                        })
                    }
                }
                let arg = self.expr()?;
                match self.bump() {
                    Token::RParen => {}
                    t => {
                        return Err(ExprError::Syntax {
                            offset: self.tokens[self.pos - 1].1,
                            message: format!("expected `)`, found {}", t.describe()),
                        })
                    }
                }
                Ok(Arc::new(match name.as_str() {
                    "sin" => Node::Sin(arg),
                    "cos" => Node::Cos(arg),
                    "exp" => Node::Exp(arg),
                    _ => Node::Tanh(arg),
                }))
            }
            "pi" => Ok(Arc::new(Node::Const(std::f64::consts::PI))),
            _ => {
                if let Some(rest) = name.strip_prefix('x') {
                    if let Ok(index) = rest.parse::<usize>() {
                        if index == 0 {
                            return Err(ExprError::Syntax {
                                offset: off,
                                message: "state variables are 1-based (`x1`)".into(),
                            });
                        }
                        if index > self.n {
                            return Err(ExprError::VariableOutOfRange { index, n: self.n });
                        }
                        return Ok(Arc::new(Node::Var(index - 1)));
                    }
                }
                Err(ExprError::UnknownIdentifier { name, offset: off })
            }
        }
    }
}
