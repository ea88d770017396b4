//! Scalar field expressions over `x1..xn`.
//!
//! Text is parsed into an [`Ast`] and then lowered to a postfix program, which
//! is what [`Expression::eval`] runs. Every instruction remembers the byte span
//! of the sub-expression it came from so domain errors point at the source.

mod parse;
mod program;

use std::fmt;

use crate::error::{Result, Span};

pub use parse::parse_ast;
use program::Program;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Abs,
    Min,
    Max,
    Pow,
}

impl Func {
    pub fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Sqrt | Func::Exp | Func::Log | Func::Abs => 1,
            Func::Min | Func::Max | Func::Pow => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub enum AstKind {
    Num(f64),
    /// Zero-based variable index (`x1` is 0).
    Var(usize),
    Neg(Box<Ast>),
    Binary(BinOp, Box<Ast>, Box<Ast>),
    Call(Func, Vec<Ast>),
}

#[derive(Clone, Debug)]
pub struct Ast {
    pub kind: AstKind,
    pub span: Span,
}

impl Ast {
    pub fn new(kind: AstKind, span: Span) -> Self {
        Self { kind, span }
    }

    /// Structural equality ignoring spans.
    pub fn same_shape(&self, other: &Ast) -> bool {
        use AstKind::*;
        match (&self.kind, &other.kind) {
            (Num(a), Num(b)) => a.to_bits() == b.to_bits(),
            (Var(a), Var(b)) => a == b,
            (Neg(a), Neg(b)) => a.same_shape(b),
            (Binary(o1, l1, r1), Binary(o2, l2, r2)) => {
                o1 == o2 && l1.same_shape(l2) && r1.same_shape(r2)
            }
            (Call(f1, a1), Call(f2, a2)) => {
                f1 == f2 && a1.len() == a2.len() && a1.iter().zip(a2).all(|(x, y)| x.same_shape(y))
            }
            _ => false,
        }
    }

    fn precedence(&self) -> u8 {
        match &self.kind {
            AstKind::Binary(op, _, _) => op.precedence(),
            AstKind::Neg(_) => 3,
            _ => 5,
        }
    }
}

impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            AstKind::Num(v) => write!(f, "{v:?}"),
            AstKind::Var(i) => write!(f, "x{}", i + 1),
            AstKind::Neg(inner) => {
                if inner.precedence() < 3 {
                    write!(f, "-({inner})")
                } else {
                    write!(f, "-{inner}")
                }
            }
            AstKind::Binary(op, lhs, rhs) => {
                let p = op.precedence();
                // `^` is right associative, the rest left associative
                let (lhs_paren, rhs_paren) = if *op == BinOp::Pow {
                    (lhs.precedence() <= p, rhs.precedence() < 3)
                } else {
                    (lhs.precedence() < p, rhs.precedence() <= p)
                };
                if lhs_paren {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rhs_paren {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
            AstKind::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// A parsed, arity-checked scalar expression in `dim` variables.
#[derive(Clone, Debug)]
pub struct Expression {
    source: String,
    dim: usize,
    ast: Ast,
    program: Program,
}

impl Expression {
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let ast = parse_ast(text, dim)?;
        let program = Program::compile(&ast);
        Ok(Self {
            source: text.to_string(),
            dim,
            ast,
            program,
        })
    }

    pub fn constant(value: f64) -> Self {
        let ast = Ast::new(AstKind::Num(value), Span::new(0, 0));
        let program = Program::compile(&ast);
        Self {
            source: format!("{value:?}"),
            dim: 0,
            ast,
            program,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    /// Evaluates at `point`; `point` must have at least `dim` coordinates.
    pub fn eval(&self, point: &[f64]) -> Result<f64> {
        if point.len() < self.dim {
            return Err(crate::Error::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        self.program.run(point)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.ast.fmt(f)
    }
}
