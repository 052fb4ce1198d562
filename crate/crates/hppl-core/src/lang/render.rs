//! Canonical source renderer. Parsing rendered output yields an equal program,
//! so rendering is the normal form used by tooling and tests.

use super::ast::*;
use std::fmt::Write;

/// Formats a float so it survives a lex round trip: integral values keep a
/// trailing dot, everything else uses shortest-exact notation.
pub fn fmt_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}.", v.trunc() as i64)
    } else {
        let mut s = format!("{v}");
        if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
            s.push('.');
        }
        s
    }
}

pub fn render(p: &Program) -> String {
    let mut out = String::new();
    for (name, value) in &p.consts {
        let _ = writeln!(out, "const {name} = {value};");
    }
    if !p.consts.is_empty() {
        out.push('\n');
    }
    let _ = writeln!(out, "function {}({}) {{", p.name, p.params.join(", "));
    render_stmts(&mut out, &p.body, 1);
    let _ = writeln!(out, "  {}", p.result);
    out.push_str("}\n");
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn render_stmts(out: &mut String, stmts: &[Stmt], depth: usize) {
    for s in stmts {
        indent(out, depth);
        match &s.kind {
            StmtKind::Sample { target, ann, dist } => {
                let ann = match ann {
                    Annotation::None => "",
                    Annotation::Approx => "approx ",
                    Annotation::Exact => "exact ",
                };
                let _ = writeln!(out, "{target} <- {ann}{};", render_dist(dist));
            }
            StmtKind::Observe { subject, datum } => {
                let _ = writeln!(out, "observe({subject}, {});", render_data_ref(datum));
            }
            StmtKind::If {
                cond,
                then_branch,
                else_branch,
            } => {
                let _ = writeln!(out, "if ({cond}) {{");
                render_stmts(out, then_branch, depth + 1);
                indent(out, depth);
                if else_branch.is_empty() {
                    out.push_str("}\n");
                } else {
                    out.push_str("} else {\n");
                    render_stmts(out, else_branch, depth + 1);
                    indent(out, depth);
                    out.push_str("}\n");
                }
            }
            StmtKind::For { index, lo, hi, body } => {
                let _ = writeln!(
                    out,
                    "for {index} in {} .. {} {{",
                    render_int(lo),
                    render_int(hi)
                );
                render_stmts(out, body, depth + 1);
                indent(out, depth);
                out.push_str("}\n");
            }
        }
    }
}

fn render_dist(d: &DistExpr) -> String {
    match d {
        DistExpr::Gaussian { mean, variance } => {
            format!(
                "gaussian({}, {})",
                render_expr(mean, 0),
                render_expr(variance, 0)
            )
        }
        DistExpr::Bernoulli { prob } => format!("bernoulli({})", render_expr(prob, 0)),
    }
}

fn render_data_ref(d: &DataRef) -> String {
    format!("{}[{}]", d.param, render_int(&d.index))
}

fn render_int(e: &IntExpr) -> String {
    match e {
        IntExpr::Lit(n) => n.to_string(),
        IntExpr::Name(s) => s.clone(),
    }
}

/// `level` 0 renders additive context, 1 multiplicative (parenthesises sums).
fn render_expr(e: &NumExpr, level: u8) -> String {
    match e {
        NumExpr::Lit(v) => {
            let s = fmt_float(*v);
            if *v < 0.0 && level > 0 {
                format!("({s})")
            } else {
                s
            }
        }
        NumExpr::Var(name) => name.clone(),
        NumExpr::Datum(d) => render_data_ref(d),
        NumExpr::Add(a, b) => {
            let s = format!("{} + {}", render_expr(a, 0), render_expr(b, 0));
            if level > 0 {
                format!("({s})")
            } else {
                s
            }
        }
        NumExpr::Sub(a, b) => {
            let s = format!("{} - {}", render_expr(a, 0), render_expr(b, 1));
            if level > 0 {
                format!("({s})")
            } else {
                s
            }
        }
        NumExpr::Mul(a, b) => format!("{} * {}", render_expr(a, 1), render_expr(b, 1)),
    }
}

/// Compact one-line label for the statement with this id, used by verdict
/// and violation reports: `x <- exact gaussian(0., 1.)`, `observe(y, yobs[i])`,
/// `if(o)`, `for i in 1 .. N`.
pub fn stmt_head(p: &Program, id: StmtId) -> Option<String> {
    fn walk(stmts: &[Stmt], id: StmtId) -> Option<String> {
        for s in stmts {
            if s.id == id {
                return Some(match &s.kind {
                    StmtKind::Sample { target, ann, dist } => {
                        let ann = match ann {
                            Annotation::None => "",
                            Annotation::Approx => "approx ",
                            Annotation::Exact => "exact ",
                        };
                        format!("{target} <- {ann}{}", render_dist(dist))
                    }
                    StmtKind::Observe { subject, datum } => {
                        format!("observe({subject}, {})", render_data_ref(datum))
                    }
                    StmtKind::If { cond, .. } => format!("if({cond})"),
                    StmtKind::For { index, lo, hi, .. } => {
                        format!("for {index} in {} .. {}", render_int(lo), render_int(hi))
                    }
                });
            }
            let inner = match &s.kind {
                StmtKind::If {
                    then_branch,
                    else_branch,
                    ..
                } => walk(then_branch, id).or_else(|| walk(else_branch, id)),
                StmtKind::For { body, .. } => walk(body, id),
                _ => None,
            };
            if inner.is_some() {
                return inner;
            }
        }
        None
    }
    walk(&p.body, id)
}
