//! Arithmetic expressions over `x1, …, xd` for user-defined targets.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, numbers, the constants
//! `pi` and `e`, and the functions `sin cos tan atan exp ln log sqrt abs tanh`.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(fn(f64) -> f64, Box<Node>),
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Var(i) => x[*i],
            Node::Neg(a) => -a.eval(x),
            Node::Call(f, a) => f(a.eval(x)),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    '/' => a / b,
                    _ => a.powf(b),
                }
            }
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Num(_) => None,
            Node::Var(i) => Some(*i),
            Node::Neg(a) | Node::Call(_, a) => a.max_var(),
            Node::Bin(_, a, b) => a.max_var().max(b.max_var()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Expression {
    source: String,
    root: Node,
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self> {
        let mut p = Parser {
            s: source.as_bytes(),
            pos: 0,
        };
        let root = p.sum()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Self {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Number of inputs referenced, i.e. the largest `k` in `xk`.
    pub fn arity(&self) -> usize {
        self.root.max_var().map_or(0, |i| i + 1)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() < self.arity() {
            return Err(Error::DimensionMismatch {
                what: "expression inputs",
                expected: self.arity(),
                got: x.len(),
            });
        }
        Ok(self.root.eval(x))
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Config(format!("expression error at byte {}: {msg}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.product()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(op as char, Box::new(lhs), Box::new(self.product()?));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            lhs = Node::Bin(op as char, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // right associative, binds tighter than unary minus on its left
    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.sum()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.word(),
            _ => Err(self.error("expected a number, variable or `(`")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.s.len() {
            let c = self.s[self.pos];
            let exp_sign = (c == b'-' || c == b'+') && matches!(self.s[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
        text.parse().map(Node::Num).map_err(|_| self.error("bad number"))
    }

    fn word(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
        if let Some(idx) = name.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()) {
            if idx == 0 {
                return Err(self.error("variables are numbered from x1"));
            }
            return Ok(Node::Var(idx - 1));
        }
        match name {
            "pi" => return Ok(Node::Num(std::f64::consts::PI)),
            "e" => return Ok(Node::Num(std::f64::consts::E)),
            _ => {}
        }
        let f: fn(f64) -> f64 = match name {
            "sin" => f64::sin,
            "cos" => f64::cos,
            "tan" => f64::tan,
            "atan" | "arctan" => f64::atan,
            "exp" => f64::exp,
            "ln" | "log" => f64::ln,
            "sqrt" => f64::sqrt,
            "abs" => f64::abs,
            "tanh" => f64::tanh,
            _ => return Err(self.error(&format!("unknown name `{name}`"))),
        };
        if self.peek() != Some(b'(') {
            return Err(self.error("expected `(` after function name"));
        }
        Ok(Node::Call(f, Box::new(self.atom()?)))
    }
}
