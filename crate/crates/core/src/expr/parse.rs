use super::{Ast, AstKind, BinOp, Func};
use crate::error::{Error, Result, Span};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    span: Span,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let lit = &text[start..i];
            let value: f64 = lit.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("malformed number `{lit}`"),
            })?;
            out.push(Token {
                tok: Tok::Num(value),
                span: Span::new(start, i),
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(text[start..i].to_string()),
                span: Span::new(start, i),
            });
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => {
                return Err(Error::Syntax {
                    offset: start,
                    message: format!("unexpected character `{}`", &text[start..].chars().next().unwrap()),
                })
            }
        };
        i += 1;
        out.push(Token {
            tok,
            span: Span::new(start, i),
        });
    }
    out.push(Token {
        tok: Tok::End,
        span: Span::new(text.len(), text.len()),
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token> {
        let t = self.bump();
        if t.tok == tok {
            Ok(t)
        } else {
            Err(Error::Syntax {
                offset: t.span.start,
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Ast> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = self.peek().tok {
            self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            let span = lhs.span.join(rhs.span);
            lhs = Ast::new(AstKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = self.peek().tok {
            self.bump();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            let span = lhs.span.join(rhs.span);
            lhs = Ast::new(AstKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Ast> {
        if self.peek().tok == Tok::Op('-') {
            let minus = self.bump();
            let inner = self.unary()?;
            let span = minus.span.join(inner.span);
            return Ok(Ast::new(AstKind::Neg(Box::new(inner)), span));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast> {
        let base = self.primary()?;
        if self.peek().tok == Tok::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            let span = base.span.join(exponent.span);
            return Ok(Ast::new(
                AstKind::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)),
                span,
            ));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Ast> {
        let t = self.bump();
        match t.tok {
            Tok::Num(v) => Ok(Ast::new(AstKind::Num(v), t.span)),
            Tok::LParen => {
                let inner = self.expr()?;
                let close = self.expect(Tok::RParen, "`)`")?;
                Ok(Ast::new(inner.kind, t.span.join(close.span)))
            }
            Tok::Ident(name) => {
                if self.peek().tok == Tok::LParen {
                    let func = Func::lookup(&name).ok_or_else(|| Error::UnknownIdentifier {
                        name: name.clone(),
                        offset: t.span.start,
                    })?;
                    self.bump();
                    let mut args = Vec::new();
                    if self.peek().tok != Tok::RParen {
                        loop {
                            args.push(self.expr()?);
                            if self.peek().tok == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    let close = self.expect(Tok::RParen, "`)` or `,`")?;
                    if args.len() != func.arity() {
                        return Err(Error::Arity {
                            name,
                            expected: func.arity(),
                            got: args.len(),
                            offset: t.span.start,
                        });
                    }
                    return Ok(Ast::new(AstKind::Call(func, args), t.span.join(close.span)));
                }
                self.variable(&name, t.span)
            }
            Tok::End => Err(Error::Syntax {
                offset: t.span.start,
                message: "unexpected end of input".into(),
            }),
            other => Err(Error::Syntax {
                offset: t.span.start,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }

    fn variable(&self, name: &str, span: Span) -> Result<Ast> {
        let index = name
            .strip_prefix('x')
            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) && !d.starts_with('0'))
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| Error::UnknownIdentifier {
                name: name.to_string(),
                offset: span.start,
            })?;
        if index > self.dim {
            return Err(Error::VariableOutOfRange {
                index,
                dim: self.dim,
                offset: span.start,
            });
        }
        Ok(Ast::new(AstKind::Var(index - 1), span))
    }
}

/// Parses `text` with standard precedence: `^` (right associative) binds
/// tighter than unary minus, which binds tighter than `* /`, then `+ -`.
pub fn parse_ast(text: &str, dim: usize) -> Result<Ast> {
    let tokens = lex(text)?;
    let mut p = Parser { tokens, pos: 0, dim };
    let ast = p.expr()?;
    let t = p.peek();
    if t.tok != Tok::End {
        return Err(Error::Syntax {
            offset: t.span.start,
            message: "trailing input".into(),
        });
    }
    Ok(ast)
}
