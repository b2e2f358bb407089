//! Minimal arithmetic expressions over (t, x1..x3) for inline data
//! fields: plus, minus, times, divide, powers, parentheses, unary minus,
//! cos/sin/exp, numeric literals and the constant pi.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at position {pos}")]
    UnexpectedChar { pos: usize, ch: char },
    #[error("unknown identifier '{name}' at position {pos}")]
    UnknownIdent { pos: usize, name: String },
    #[error("malformed number at position {pos}")]
    BadNumber { pos: usize },
    #[error("expected {expected} at position {pos}")]
    Expected { pos: usize, expected: &'static str },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("trailing input at position {pos}")]
    TrailingInput { pos: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Time,
    Coord(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Cos(Box<Expr>),
    Sin(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Time => t,
            Expr::Coord(i) => x[*i],
            Expr::Neg(e) => -e.eval(t, x),
            Expr::Add(a, b) => a.eval(t, x) + b.eval(t, x),
            Expr::Sub(a, b) => a.eval(t, x) - b.eval(t, x),
            Expr::Mul(a, b) => a.eval(t, x) * b.eval(t, x),
            Expr::Div(a, b) => a.eval(t, x) / b.eval(t, x),
            Expr::Pow(a, b) => a.eval(t, x).powf(b.eval(t, x)),
            Expr::Cos(e) => e.eval(t, x).cos(),
            Expr::Sin(e) => e.eval(t, x).sin(),
            Expr::Exp(e) => e.eval(t, x).exp(),
        }
    }

    /// Highest coordinate index used, if any (0 for x1).
    pub fn max_coord(&self) -> Option<usize> {
        match self {
            Expr::Num(_) | Expr::Time => None,
            Expr::Coord(i) => Some(*i),
            Expr::Neg(e) | Expr::Cos(e) | Expr::Sin(e) | Expr::Exp(e) => e.max_coord(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => match (a.max_coord(), b.max_coord()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (Some(x), None) | (None, Some(x)) => Some(x),
                (None, None) => None,
            },
        }
    }

    pub fn uses_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Num(_) | Expr::Coord(_) => false,
            Expr::Neg(e) | Expr::Cos(e) | Expr::Sin(e) | Expr::Exp(e) => e.uses_time(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.uses_time() || b.uses_time(),
        }
    }
}

pub fn parse(text: &str) -> Result<Expr, ExprError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    let expr = parser.expr()?;
    if parser.pos < parser.tokens.len() {
        return Err(ExprError::TrailingInput {
            pos: parser.tokens[parser.pos].1,
        });
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let tok = match c {
            ' ' | '\t' => {
                i += 1;
                continue;
            }
            '+' => Token::Plus,
            '-' => Token::Minus,
            '*' => Token::Star,
            '/' => Token::Slash,
            '^' => Token::Caret,
            '(' => Token::LParen,
            ')' => Token::RParen,
            '0'..='9' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
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
                let s: String = chars[start..i].iter().collect();
                let v = s.parse().map_err(|_| ExprError::BadNumber { pos: start })?;
                out.push((Token::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push((Token::Ident(s), start));
                continue;
            }
            other => return Err(ExprError::UnexpectedChar { pos: i, ch: other }),
        };
        out.push((tok, i));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Result<(Token, usize), ExprError> {
        let item = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or(ExprError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(item)
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let (tok, pos) = self.next()?;
        match tok {
            Token::Num(v) => Ok(Expr::Num(v)),
            Token::LParen => {
                let inner = self.expr()?;
                match self.next()? {
                    (Token::RParen, _) => Ok(inner),
                    (_, p) => Err(ExprError::Expected {
                        pos: p,
                        expected: "')'",
                    }),
                }
            }
            Token::Ident(name) => match name.as_str() {
                "t" => Ok(Expr::Time),
                "x1" => Ok(Expr::Coord(0)),
                "x2" => Ok(Expr::Coord(1)),
                "x3" => Ok(Expr::Coord(2)),
                "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                "cos" | "sin" | "exp" => {
                    match self.next()? {
                        (Token::LParen, _) => {}
                        (_, p) => {
                            return Err(ExprError::Expected {
                                pos: p,
                                expected: "'(' after function name",
                            })
                        }
                    }
                    let arg = self.expr()?;
                    match self.next()? {
                        (Token::RParen, _) => {}
                        (_, p) => {
                            return Err(ExprError::Expected {
                                pos: p,
                                expected: "')'",
                            })
                        }
                    }
                    Ok(match name.as_str() {
                        "cos" => Expr::Cos(Box::new(arg)),
                        "sin" => Expr::Sin(Box::new(arg)),
                        _ => Expr::Exp(Box::new(arg)),
                    })
                }
                _ => Err(ExprError::UnknownIdent { pos, name }),
            },
            _ => Err(ExprError::Expected {
                pos,
                expected: "number, identifier or '('",
            }),
        }
    }
}
