//! Syntax tree for the modeling language.

use std::collections::BTreeMap;

/// Stable statement identity, assigned in pre-order by the parser.
/// Survives validation so runtime diagnostics and verifier verdicts can
/// point back at source statements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(transparent)]
pub struct StmtId(pub u32);

impl std::fmt::Display for StmtId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Annotation {
    None,
    Approx,
    Exact,
}

/// One model: a named function over data-array parameters, integer
/// constants, a statement body, and a result variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub name: String,
    pub params: Vec<String>,
    pub consts: BTreeMap<String, i64>,
    pub body: Vec<Stmt>,
    pub result: String,
}

#[derive(Debug, Clone)]
pub struct Stmt {
    pub id: StmtId,
    /// 1-based source line of the statement head. Render-then-reparse moves
    /// lines, so equality ignores this (and `id`).
    pub line: u32,
    pub kind: StmtKind,
}

impl PartialEq for Stmt {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Sample {
        target: String,
        ann: Annotation,
        dist: DistExpr,
    },
    Observe {
        subject: String,
        datum: DataRef,
    },
    If {
        cond: String,
        then_branch: Vec<Stmt>,
        else_branch: Vec<Stmt>,
    },
    For {
        index: String,
        lo: IntExpr,
        hi: IntExpr,
        body: Vec<Stmt>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistExpr {
    Gaussian { mean: NumExpr, variance: NumExpr },
    Bernoulli { prob: NumExpr },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NumExpr {
    Lit(f64),
    /// A scalar binding: sampled variable, loop index, or declared constant.
    Var(String),
    Datum(DataRef),
    Add(Box<NumExpr>, Box<NumExpr>),
    Sub(Box<NumExpr>, Box<NumExpr>),
    Mul(Box<NumExpr>, Box<NumExpr>),
}

/// `param[index]`: one cell of a data column.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRef {
    pub param: String,
    pub index: IntExpr,
}

/// Integer positions: literals, or names resolving to a constant or loop index.
#[derive(Debug, Clone, PartialEq)]
pub enum IntExpr {
    Lit(i64),
    Name(String),
}

impl NumExpr {
    pub fn add(a: NumExpr, b: NumExpr) -> NumExpr {
        NumExpr::Add(Box::new(a), Box::new(b))
    }
    pub fn sub(a: NumExpr, b: NumExpr) -> NumExpr {
        NumExpr::Sub(Box::new(a), Box::new(b))
    }
    pub fn mul(a: NumExpr, b: NumExpr) -> NumExpr {
        NumExpr::Mul(Box::new(a), Box::new(b))
    }
}
