//! Recursive-descent parser producing a lossless `Program`.

use super::ast::*;
use super::lexer::{lex, Span, Tok, Token};
use std::collections::BTreeMap;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ParseError {
    #[error("unexpected {found} at line {line}, column {col}; expected {}", expected.join(" or "))]
    Unexpected {
        found: String,
        line: u32,
        col: u32,
        expected: Vec<String>,
    },
    #[error("stray character `{ch}` at line {line}, column {col}")]
    BadChar { ch: char, line: u32, col: u32 },
    #[error("malformed number `{text}` at line {line}, column {col}")]
    BadNumber { text: String, line: u32, col: u32 },
    #[error("duplicate const `{name}` at line {line}")]
    DuplicateConst { name: String, line: u32 },
}

pub fn parse(src: &str) -> Result<Program, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        next_id: 0,
    };
    p.program()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    next_id: u32,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.tokens[(self.pos + 1).min(self.tokens.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn advance(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn fresh_id(&mut self) -> StmtId {
        let id = StmtId(self.next_id);
        self.next_id += 1;
        id
    }

    fn unexpected<T>(&self, expected: &[&str]) -> Result<T, ParseError> {
        let sp = self.span();
        Err(ParseError::Unexpected {
            found: self.peek().describe(),
            line: sp.line,
            col: sp.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.advance();
            Ok(())
        } else {
            self.unexpected(&[what])
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.advance();
                Ok(name)
            }
            _ => self.unexpected(&[what]),
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        let mut consts = BTreeMap::new();
        while *self.peek() == Tok::KwConst {
            let line = self.span().line;
            self.advance();
            let name = self.ident("constant name")?;
            self.expect(Tok::Eq, "`=`")?;
            let value = self.int_literal()?;
            self.expect(Tok::Semi, "`;`")?;
            if consts.insert(name.clone(), value).is_some() {
                return Err(ParseError::DuplicateConst { name, line });
            }
        }
        self.expect(Tok::KwFunction, "`function`")?;
        let name = self.ident("function name")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                params.push(self.ident("parameter name")?);
                if *self.peek() == Tok::Comma {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        self.expect(Tok::LBrace, "`{`")?;
        let body = self.stmts_until_result()?;
        let result = self.ident("result variable")?;
        self.expect(Tok::RBrace, "`}`")?;
        self.expect(Tok::Eof, "end of input")?;
        Ok(Program {
            name,
            params,
            consts,
            body,
            result,
        })
    }

    fn int_literal(&mut self) -> Result<i64, ParseError> {
        let negative = if *self.peek() == Tok::Minus {
            self.advance();
            true
        } else {
            false
        };
        match *self.peek() {
            Tok::Number(n) if n.fract() == 0.0 => {
                self.advance();
                let v = n as i64;
                Ok(if negative { -v } else { v })
            }
            _ => self.unexpected(&["integer literal"]),
        }
    }

    /// Statements of the top-level body; stops at the trailing result variable.
    fn stmts_until_result(&mut self) -> Result<Vec<Stmt>, ParseError> {
        let mut stmts = Vec::new();
        loop {
            match self.peek() {
                Tok::Ident(_) if *self.peek2() == Tok::Arrow => stmts.push(self.stmt()?),
                Tok::KwObserve | Tok::KwIf | Tok::KwFor => stmts.push(self.stmt()?),
                Tok::Ident(_) => return Ok(stmts),
                _ => {
                    return self.unexpected(&["statement", "result variable"]);
                }
            }
        }
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut stmts = Vec::new();
        while *self.peek() != Tok::RBrace {
            stmts.push(self.stmt()?);
        }
        self.advance(); // }
        Ok(stmts)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let span = self.span();
        let id = self.fresh_id();
        let kind = match self.peek().clone() {
            Tok::Ident(target) => {
                self.advance();
                self.expect(Tok::Arrow, "`<-`")?;
                let ann = match self.peek() {
                    Tok::KwApprox => {
                        self.advance();
                        Annotation::Approx
                    }
                    Tok::KwExact => {
                        self.advance();
                        Annotation::Exact
                    }
                    _ => Annotation::None,
                };
                let dist = self.dist()?;
                self.expect(Tok::Semi, "`;`")?;
                StmtKind::Sample { target, ann, dist }
            }
            Tok::KwObserve => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let subject = self.ident("observed variable")?;
                self.expect(Tok::Comma, "`,`")?;
                let datum = self.data_ref()?;
                self.expect(Tok::RParen, "`)`")?;
                self.expect(Tok::Semi, "`;`")?;
                StmtKind::Observe { subject, datum }
            }
            Tok::KwIf => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let cond = self.ident("condition variable")?;
                self.expect(Tok::RParen, "`)`")?;
                let then_branch = self.block()?;
                let else_branch = if *self.peek() == Tok::KwElse {
                    self.advance();
                    self.block()?
                } else {
                    Vec::new()
                };
                self.eat_optional_semi();
                StmtKind::If {
                    cond,
                    then_branch,
                    else_branch,
                }
            }
            Tok::KwFor => {
                self.advance();
                let index = self.ident("loop index")?;
                self.expect(Tok::KwIn, "`in`")?;
                let lo = self.int_expr()?;
                self.expect(Tok::DotDot, "`..`")?;
                let hi = self.int_expr()?;
                let body = self.block()?;
                self.eat_optional_semi();
                StmtKind::For {
                    index,
                    lo,
                    hi,
                    body,
                }
            }
            _ => return self.unexpected(&["statement"]),
        };
        Ok(Stmt {
            id,
            line: span.line,
            kind,
        })
    }

    fn eat_optional_semi(&mut self) {
        if *self.peek() == Tok::Semi {
            self.advance();
        }
    }

    fn dist(&mut self) -> Result<DistExpr, ParseError> {
        match self.peek() {
            Tok::KwGaussian => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let mean = self.num_expr()?;
                self.expect(Tok::Comma, "`,`")?;
                let variance = self.num_expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(DistExpr::Gaussian { mean, variance })
            }
            Tok::KwBernoulli => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let prob = self.num_expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(DistExpr::Bernoulli { prob })
            }
            _ => self.unexpected(&["`gaussian`", "`bernoulli`"]),
        }
    }

    fn data_ref(&mut self) -> Result<DataRef, ParseError> {
        let param = self.ident("data parameter")?;
        self.expect(Tok::LBracket, "`[`")?;
        let index = self.int_expr()?;
        self.expect(Tok::RBracket, "`]`")?;
        Ok(DataRef { param, index })
    }

    fn int_expr(&mut self) -> Result<IntExpr, ParseError> {
        match self.peek().clone() {
            Tok::Number(n) if n.fract() == 0.0 => {
                self.advance();
                Ok(IntExpr::Lit(n as i64))
            }
            Tok::Ident(name) => {
                self.advance();
                Ok(IntExpr::Name(name))
            }
            _ => self.unexpected(&["integer literal", "name"]),
        }
    }

    fn num_expr(&mut self) -> Result<NumExpr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.advance();
                    let rhs = self.term()?;
                    lhs = NumExpr::add(lhs, rhs);
                }
                Tok::Minus => {
                    self.advance();
                    let rhs = self.term()?;
                    lhs = NumExpr::sub(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<NumExpr, ParseError> {
        let mut lhs = self.factor()?;
        while *self.peek() == Tok::Star {
            self.advance();
            let rhs = self.factor()?;
            lhs = NumExpr::mul(lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<NumExpr, ParseError> {
        match self.peek().clone() {
            Tok::Number(n) => {
                self.advance();
                Ok(NumExpr::Lit(n))
            }
            Tok::Minus => {
                self.advance();
                // Unary minus folds into literals, otherwise desugars to 0 - e.
                match self.factor()? {
                    NumExpr::Lit(n) => Ok(NumExpr::Lit(-n)),
                    e => Ok(NumExpr::sub(NumExpr::Lit(0.0), e)),
                }
            }
            Tok::Ident(name) => {
                self.advance();
                if *self.peek() == Tok::LBracket {
                    self.advance();
                    let index = self.int_expr()?;
                    self.expect(Tok::RBracket, "`]`")?;
                    Ok(NumExpr::Datum(DataRef { param: name, index }))
                } else {
                    Ok(NumExpr::Var(name))
                }
            }
            Tok::LParen => {
                self.advance();
                let e = self.num_expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            _ => self.unexpected(&["number", "variable", "`(`", "`-`"]),
        }
    }
}
