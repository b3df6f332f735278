//! Scalar expression parser and evaluator for user-supplied functions,
//! plus the builtin benchmark registry.
//!
//! Grammar: numeric literals; variables `x1..xn`, `u1..um`; binary
//! `+ − * / ^` with precedence `^` > unary `−` > `* /` > `+ −` (all
//! left-associative except `^`); the functions `sin cos tan atan atan2 exp
//! log sqrt abs min max`; parentheses. Whitespace is insignificant; error
//! offsets are 0-based byte positions.
//!
//! Implemented as a hand-rolled Pratt parser: the grammar is small, the
//! offsets come out exact, and there is nothing to configure.

use crate::geometry::Domain;
use nalgebra::DVector;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExprError {
    #[error("parse error at offset {offset}: expected {expected}")]
    Parse { offset: usize, expected: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("{func} takes {expected} argument(s), found {found} (offset {offset})")]
    Arity {
        func: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
    #[error("expression `{subexpr}` evaluated to a non-finite value")]
    Eval { subexpr: String },
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Atan,
    Atan2,
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "atan" => Func::Atan,
            "atan2" => Func::Atan2,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Atan => "atan",
            Func::Atan2 => "atan2",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Atan2 | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    State,
    Input,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    /// 1-based display index; the flat position depends on the dims.
    Var { kind: VarKind, index: usize },
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression bound to `(n_states, n_inputs)` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub dims: (usize, usize),
    pub root: Node,
}

// ----- tokenizer -----

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text: text.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token with its start offset; `None` at end of input.
    fn next(&mut self) -> Result<Option<(Tok, usize)>, ExprError> {
        self.skip_ws();
        if self.pos >= self.text.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.text[self.pos];
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                let mut end = self.pos;
                while end < self.text.len()
                    && (self.text[end].is_ascii_digit() || self.text[end] == b'.')
                {
                    end += 1;
                }
                if end < self.text.len() && (self.text[end] == b'e' || self.text[end] == b'E') {
                    let mut e = end + 1;
                    if e < self.text.len() && (self.text[e] == b'+' || self.text[e] == b'-') {
                        e += 1;
                    }
                    if e < self.text.len() && self.text[e].is_ascii_digit() {
                        end = e;
                        while end < self.text.len() && self.text[end].is_ascii_digit() {
                            end += 1;
                        }
                    }
                }
                let s = std::str::from_utf8(&self.text[start..end]).unwrap();
                let v: f64 = s.parse().map_err(|_| ExprError::Parse {
                    offset: start,
                    expected: "a numeric literal".into(),
                })?;
                self.pos = end;
                return Ok(Some((Tok::Num(v), start)));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = self.pos;
                while end < self.text.len()
                    && (self.text[end].is_ascii_alphanumeric() || self.text[end] == b'_')
                {
                    end += 1;
                }
                let s = std::str::from_utf8(&self.text[start..end]).unwrap().to_string();
                self.pos = end;
                return Ok(Some((Tok::Ident(s), start)));
            }
            _ => {
                return Err(ExprError::Parse {
                    offset: start,
                    expected: "an operator, operand, or parenthesis".into(),
                })
            }
        };
        self.pos += 1;
        Ok(Some((tok, start)))
    }
}

// ----- parser -----

struct Parser {
    toks: Vec<(Tok, usize)>,
    cursor: usize,
    end: usize,
    dims: (usize, usize),
}

// binding powers: (+,-) < (*,/) < unary- < ^
const BP_ADD: (u8, u8) = (10, 11);
const BP_MUL: (u8, u8) = (20, 21);
const BP_NEG: u8 = 40;
const BP_POW: (u8, u8) = (50, 50); // right-associative

impl Parser {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.cursor)
    }

    fn bump(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.cursor).cloned();
        if t.is_some() {
            self.cursor += 1;
        }
        t
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.bump() {
            Some((Tok::RParen, _)) => Ok(()),
            other => Err(ExprError::Parse {
                offset: other.map_or(self.end, |(_, o)| o),
                expected: "`)`".into(),
            }),
        }
    }

    fn parse_expr(&mut self, min_bp: u8) -> Result<Node, ExprError> {
        let mut lhs = self.parse_prefix()?;
        loop {
            let op = match self.peek() {
                Some((Tok::Plus, _)) => BinOp::Add,
                Some((Tok::Minus, _)) => BinOp::Sub,
                Some((Tok::Star, _)) => BinOp::Mul,
                Some((Tok::Slash, _)) => BinOp::Div,
                Some((Tok::Caret, _)) => BinOp::Pow,
                _ => break,
            };
            let (l_bp, r_bp) = match op {
                BinOp::Add | BinOp::Sub => BP_ADD,
                BinOp::Mul | BinOp::Div => BP_MUL,
                BinOp::Pow => BP_POW,
            };
            if l_bp < min_bp {
                break;
            }
            self.bump();
            let rhs = self.parse_expr(r_bp)?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_prefix(&mut self) -> Result<Node, ExprError> {
        match self.bump() {
            Some((Tok::Num(v), _)) => Ok(Node::Num(v)),
            Some((Tok::Minus, _)) => {
                let operand = self.parse_expr(BP_NEG)?;
                Ok(Node::Neg(Box::new(operand)))
            }
            Some((Tok::LParen, _)) => {
                let inner = self.parse_expr(0)?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some((Tok::Ident(name), offset)) => self.parse_ident(name, offset),
            other => Err(ExprError::Parse {
                offset: other.map_or(self.end, |(_, o)| o),
                expected: "an operand".into(),
            }),
        }
    }

    fn parse_ident(&mut self, name: String, offset: usize) -> Result<Node, ExprError> {
        if let Some(func) = Func::from_name(&name) {
            match self.bump() {
                Some((Tok::LParen, _)) => {}
                other => {
                    return Err(ExprError::Parse {
                        offset: other.map_or(self.end, |(_, o)| o),
                        expected: format!("`(` after function `{name}`"),
                    })
                }
            }
            let mut args = vec![self.parse_expr(0)?];
            while matches!(self.peek(), Some((Tok::Comma, _))) {
                self.bump();
                args.push(self.parse_expr(0)?);
            }
            self.expect_rparen()?;
            if args.len() != func.arity() {
                return Err(ExprError::Arity {
                    func: name,
                    expected: func.arity(),
                    found: args.len(),
                    offset,
                });
            }
            return Ok(Node::Call(func, args));
        }

        // variables: x<k> or u<k>, 1-based, bounded by the declared dims
        let (kind, bound) = match name.as_bytes().first() {
            Some(b'x') => (VarKind::State, self.dims.0),
            Some(b'u') => (VarKind::Input, self.dims.1),
            _ => {
                return Err(ExprError::UnknownIdentifier { name, offset });
            }
        };
        let index: usize = match name[1..].parse() {
            Ok(i) => i,
            Err(_) => return Err(ExprError::UnknownIdentifier { name, offset }),
        };
        if index == 0 || index > bound {
            return Err(ExprError::UnknownIdentifier { name, offset });
        }
        Ok(Node::Var { kind, index })
    }
}

/// Parses an expression against the declared `(n_states, n_inputs)`.
pub fn parse(text: &str, dims: (usize, usize)) -> Result<Expr, ExprError> {
    let mut lexer = Lexer::new(text);
    let mut toks = Vec::new();
    while let Some(t) = lexer.next()? {
        toks.push(t);
    }
    let mut parser = Parser {
        toks,
        cursor: 0,
        end: text.len(),
        dims,
    };
    let root = parser.parse_expr(0)?;
    if let Some(&(_, offset)) = parser.peek() {
        return Err(ExprError::Parse {
            offset,
            expected: "end of input or an operator".into(),
        });
    }
    Ok(Expr { dims, root })
}

// ----- printing -----

fn prec(node: &Node) -> u8 {
    match node {
        Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Node::Neg(_) => 3,
        Node::Bin(BinOp::Pow, ..) => 4,
        _ => 5,
    }
}

fn write_node(node: &Node, out: &mut String) {
    match node {
        Node::Num(v) => out.push_str(&format!("{v}")),
        Node::Var { kind, index } => {
            out.push(if *kind == VarKind::State { 'x' } else { 'u' });
            out.push_str(&index.to_string());
        }
        Node::Neg(child) => {
            out.push('-');
            let parens = prec(child) < 3 || matches!(**child, Node::Neg(_));
            if parens {
                out.push('(');
            }
            write_node(child, out);
            if parens {
                out.push(')');
            }
        }
        Node::Bin(op, l, r) => {
            let p = prec(node);
            let (lp, rp) = match op {
                // right-associative: parenthesize an equal-precedence left child
                BinOp::Pow => (prec(l) <= p, prec(r) < p),
                _ => (prec(l) < p, prec(r) <= p),
            };
            if lp {
                out.push('(');
            }
            write_node(l, out);
            if lp {
                out.push(')');
            }
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            if rp {
                out.push('(');
            }
            write_node(r, out);
            if rp {
                out.push(')');
            }
        }
        Node::Call(func, args) => {
            out.push_str(func.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_node(a, out);
            }
            out.push(')');
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_node(&self.root, &mut s);
        f.write_str(&s)
    }
}

// ----- evaluation -----

impl Expr {
    /// Flat position of a variable in the augmented point `[x; u]`.
    fn flat_index(&self, kind: VarKind, index: usize) -> usize {
        match kind {
            VarKind::State => index - 1,
            VarKind::Input => self.dims.0 + index - 1,
        }
    }

    /// Evaluates at an augmented original-frame point. Any non-finite
    /// intermediate (division by zero, log of a nonpositive value, a
    /// negative base under a fractional exponent) aborts with the
    /// offending subexpression in the error.
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64, ExprError> {
        assert_eq!(
            x.len(),
            self.dims.0 + self.dims.1,
            "point dimension must match the declared dims"
        );
        self.eval_node(&self.root, x)
    }

    fn eval_node(&self, node: &Node, x: &DVector<f64>) -> Result<f64, ExprError> {
        let v = match node {
            Node::Num(v) => *v,
            Node::Var { kind, index } => x[self.flat_index(*kind, *index)],
            Node::Neg(c) => -self.eval_node(c, x)?,
            Node::Bin(op, l, r) => {
                let a = self.eval_node(l, x)?;
                let b = self.eval_node(r, x)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Node::Call(func, args) => {
                let a = self.eval_node(&args[0], x)?;
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Tan => a.tan(),
                    Func::Atan => a.atan(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Atan2 => a.atan2(self.eval_node(&args[1], x)?),
                    Func::Min => a.min(self.eval_node(&args[1], x)?),
                    Func::Max => a.max(self.eval_node(&args[1], x)?),
                }
            }
        };
        if !v.is_finite() {
            let mut s = String::new();
            write_node(node, &mut s);
            return Err(ExprError::Eval { subexpr: s });
        }
        Ok(v)
    }
}

// ----- benchmark registry -----

/// A named case study: one expression per output dimension over a box.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: &'static str,
    pub exprs: Vec<Expr>,
    pub domain: Domain,
    pub dims: (usize, usize),
}

impl Benchmark {
    pub fn out_dim(&self) -> usize {
        self.exprs.len()
    }

    /// Evaluates all outputs at an augmented original-frame point.
    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>, ExprError> {
        let mut out = DVector::zeros(self.exprs.len());
        for (r, e) in self.exprs.iter().enumerate() {
            out[r] = e.eval(x)?;
        }
        Ok(out)
    }
}

pub const BUILTIN_NAMES: [&str; 3] = ["sine2d", "dubins", "vehicle_vx"];

/// Fetches a builtin benchmark by name.
///
/// `sine2d`: `sin(x + u²)` on `[−2,2]²`. `dubins`: `x₁ cos(x₂)` on
/// `[−2,2] × [0,2π]`. `vehicle_vx`: the single-track longitudinal
/// acceleration with η₁=1970, η₂=64.36, η₃=1.48 on a plausible 6-D box
/// (the source material gives no bounds; x₁ stays positive so the slip
/// angle is smooth).
pub fn builtin(name: &str) -> Result<Benchmark, ExprError> {
    let mk = |text: &str, dims: (usize, usize), lower: &[f64], upper: &[f64]| {
        let expr = parse(text, dims).expect("builtin expression parses");
        let domain = Domain::new(
            DVector::from_row_slice(lower),
            DVector::from_row_slice(upper),
        )
        .expect("builtin domain is valid");
        Benchmark {
            name: "",
            exprs: vec![expr],
            domain,
            dims,
        }
    };
    let mut b = match name {
        "sine2d" => mk("sin(x1 + u1^2)", (1, 1), &[-2.0, -2.0], &[2.0, 2.0]),
        "dubins" => mk(
            "x1 * cos(x2)",
            (2, 0),
            &[-2.0, 0.0],
            &[2.0, std::f64::consts::TAU],
        ),
        "vehicle_vx" => mk(
            "(u1*cos(u3) + u2)/1970 + 64.36*(atan((x2 + 1.48*x3)/x1) - u3)",
            (3, 3),
            &[5.0, -3.0, -1.0, -2000.0, -500.0, -0.5],
            &[30.0, 3.0, 1.0, 2000.0, 500.0, 0.5],
        ),
        other => return Err(ExprError::UnknownBenchmark(other.to_string())),
    };
    b.name = match name {
        "sine2d" => "sine2d",
        "dubins" => "dubins",
        _ => "vehicle_vx",
    };
    Ok(b)
}
