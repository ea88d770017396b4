use super::{Ast, AstKind, BinOp, Func};
use crate::error::{Error, Result, Span};

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    Load(usize),
    Neg,
    Bin(BinOp),
    Call(Func),
}

#[derive(Clone, Copy, Debug)]
struct Instr {
    op: Op,
    span: Span,
}

/// Postfix lowering of an [`Ast`].
#[derive(Clone, Debug)]
pub(super) struct Program {
    code: Vec<Instr>,
    max_depth: usize,
}

impl Program {
    pub(super) fn compile(ast: &Ast) -> Self {
        let mut code = Vec::new();
        let max_depth = emit(ast, &mut code);
        Self { code, max_depth }
    }

    pub(super) fn run(&self, x: &[f64]) -> Result<f64> {
        let mut stack: Vec<f64> = Vec::with_capacity(self.max_depth);
        for ins in &self.code {
            match ins.op {
                Op::Const(v) => stack.push(v),
                Op::Load(i) => stack.push(x[i]),
                Op::Neg => {
                    let top = stack.last_mut().expect("stack underflow");
                    *top = -*top;
                }
                Op::Bin(op) => {
                    let rhs = stack.pop().expect("stack underflow");
                    let lhs = stack.pop().expect("stack underflow");
                    stack.push(apply_binary(op, lhs, rhs, ins.span)?);
                }
                Op::Call(func) => {
                    let v = if func.arity() == 2 {
                        let b = stack.pop().expect("stack underflow");
                        let a = stack.pop().expect("stack underflow");
                        apply_binary_func(func, a, b, ins.span)?
                    } else {
                        let a = stack.pop().expect("stack underflow");
                        apply_unary_func(func, a, ins.span)?
                    };
                    stack.push(v);
                }
            }
        }
        Ok(stack.pop().expect("empty program"))
    }
}

/// Returns the stack depth needed for `ast`.
fn emit(ast: &Ast, code: &mut Vec<Instr>) -> usize {
    let span = ast.span;
    match &ast.kind {
        AstKind::Num(v) => {
            code.push(Instr { op: Op::Const(*v), span });
            1
        }
        AstKind::Var(i) => {
            code.push(Instr { op: Op::Load(*i), span });
            1
        }
        AstKind::Neg(inner) => {
            let d = emit(inner, code);
            code.push(Instr { op: Op::Neg, span });
            d
        }
        AstKind::Binary(op, lhs, rhs) => {
            let dl = emit(lhs, code);
            let dr = emit(rhs, code);
            code.push(Instr { op: Op::Bin(*op), span });
            dl.max(dr + 1)
        }
        AstKind::Call(func, args) => {
            let mut depth = 0;
            for (k, a) in args.iter().enumerate() {
                depth = depth.max(emit(a, code) + k);
            }
            code.push(Instr { op: Op::Call(*func), span });
            depth
        }
    }
}

fn domain(span: Span, message: impl Into<String>) -> Error {
    Error::Domain {
        span,
        message: message.into(),
    }
}

pub(crate) fn power(base: f64, exponent: f64, span: Span) -> Result<f64> {
    if base < 0.0 && exponent.fract() != 0.0 {
        return Err(domain(span, format!("negative base {base} with non-integer exponent {exponent}")));
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(domain(span, "zero raised to a negative power"));
    }
    Ok(base.powf(exponent))
}

fn apply_binary(op: BinOp, lhs: f64, rhs: f64, span: Span) -> Result<f64> {
    Ok(match op {
        BinOp::Add => lhs + rhs,
        BinOp::Sub => lhs - rhs,
        BinOp::Mul => lhs * rhs,
        BinOp::Div => {
            if rhs == 0.0 {
                return Err(domain(span, "division by zero"));
            }
            lhs / rhs
        }
        BinOp::Pow => power(lhs, rhs, span)?,
    })
}

fn apply_unary_func(func: Func, a: f64, span: Span) -> Result<f64> {
    Ok(match func {
        Func::Sqrt => {
            if a < 0.0 {
                return Err(domain(span, format!("sqrt of negative value {a}")));
            }
            a.sqrt()
        }
        Func::Exp => a.exp(),
        Func::Log => {
            if a <= 0.0 {
                return Err(domain(span, format!("log of non-positive value {a}")));
            }
            a.ln()
        }
        Func::Abs => a.abs(),
        _ => unreachable!("binary function routed to unary path"),
    })
}

fn apply_binary_func(func: Func, a: f64, b: f64, span: Span) -> Result<f64> {
    Ok(match func {
        Func::Min => a.min(b),
        Func::Max => a.max(b),
        Func::Pow => power(a, b, span)?,
        _ => unreachable!("unary function routed to binary path"),
    })
}
