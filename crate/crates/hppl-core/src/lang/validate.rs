//! Semantic checks run after parsing. Binding discipline is conservative:
//! loop-body and single-branch bindings do not escape their block, and a
//! random variable may be observed at most once per binding.

use super::ast::*;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum SemanticError {
    #[error("unbound variable `{name}` at line {line}")]
    Unbound { name: String, line: u32 },
    #[error("`{name}` is a data parameter and cannot be used as a scalar (line {line})")]
    DataAsScalar { name: String, line: u32 },
    #[error("unknown data parameter `{name}` at line {line}")]
    UnknownData { name: String, line: u32 },
    #[error("`{name}` is not a data index or constant (line {line})")]
    BadIndex { name: String, line: u32 },
    #[error("loop bound `{name}` is not a declared constant (line {line})")]
    BadLoopBound { name: String, line: u32 },
    #[error("`{name}` observed twice on the same path (line {line})")]
    DoubleObserve { name: String, line: u32 },
    #[error("`{name}` is bound outside the loop, so observing it at line {line} would condition the same variable on every iteration")]
    LoopCarriedObserve { name: String, line: u32 },
    #[error("condition `{name}` at line {line} is not a bernoulli-bound variable")]
    CondNotBoolean { name: String, line: u32 },
    #[error("bernoulli probability at line {line} must be a constant expression")]
    ProbNotConst { line: u32 },
    #[error("bernoulli probability {value} at line {line} is outside [0, 1]")]
    ProbOutOfRange { value: f64, line: u32 },
    #[error("gaussian variance at line {line} is not affine in random variables")]
    VarianceNotAffine { line: u32 },
    #[error("gaussian variance {value} at line {line} is not positive")]
    NonPositiveVariance { value: f64, line: u32 },
    #[error("branches at line {line} contain different numbers of observations")]
    UnbalancedObserve { line: u32 },
    #[error("result variable `{name}` is not bound on every path")]
    UnboundResult { name: String },
    #[error("duplicate parameter `{name}`")]
    DuplicateParam { name: String },
    #[error("`{name}` shadows a parameter or constant (line {line})")]
    ShadowsBinding { name: String, line: u32 },
}

/// How much an expression can be evaluated without running the program.
/// `Fold` is a static constant, `RuntimeConst` needs only data and loop
/// indices, `Affine` is linear in random variables with constant
/// coefficients, `NonAffine` is everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
pub enum ShapeClass {
    Fold,
    RuntimeConst,
    Affine,
    NonAffine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum DistKind {
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone)]
pub enum SiteShapes {
    Gaussian { mean: ShapeClass, variance: ShapeClass },
    Bernoulli { prob: f64 },
}

#[derive(Debug, Clone)]
pub struct SampleSite {
    pub var: String,
    pub line: u32,
    pub ann: Annotation,
    pub shapes: SiteShapes,
    /// Nesting depth: 0 outside loops, 1 inside the outermost loop.
    pub loop_depth: u32,
}

#[derive(Debug, Clone, Default)]
pub struct ProgramInfo {
    pub sample_sites: BTreeMap<StmtId, SampleSite>,
    pub observe_sites: BTreeMap<StmtId, (String, u32)>,
    pub max_loop_depth: u32,
}

impl ProgramInfo {
    pub fn exact_sites(&self) -> impl Iterator<Item = (&StmtId, &SampleSite)> {
        self.sample_sites
            .iter()
            .filter(|(_, s)| s.ann == Annotation::Exact)
    }
}

#[derive(Debug, Clone)]
pub struct CheckedProgram {
    pub program: Program,
    pub info: ProgramInfo,
}

pub fn check(program: Program) -> Result<CheckedProgram, SemanticError> {
    let mut params = BTreeSet::new();
    for p in &program.params {
        if !params.insert(p.clone()) {
            return Err(SemanticError::DuplicateParam { name: p.clone() });
        }
    }
    let mut ctx = Ctx {
        consts: &program.consts,
        params: &params,
        indices: Vec::new(),
        info: ProgramInfo::default(),
    };
    let mut vars = BTreeMap::new();
    ctx.stmts(&program.body, &mut vars, 0)?;
    if !vars.contains_key(&program.result) {
        return Err(SemanticError::UnboundResult {
            name: program.result.clone(),
        });
    }
    Ok(CheckedProgram {
        info: ctx.info,
        program,
    })
}

#[derive(Debug, Clone)]
struct VarState {
    /// None when branches rebound the variable with different kinds.
    kind: Option<DistKind>,
    bound_depth: u32,
    observed: bool,
}

struct Ctx<'a> {
    consts: &'a BTreeMap<String, i64>,
    params: &'a BTreeSet<String>,
    indices: Vec<String>,
    info: ProgramInfo,
}

impl Ctx<'_> {
    fn stmts(
        &mut self,
        body: &[Stmt],
        vars: &mut BTreeMap<String, VarState>,
        depth: u32,
    ) -> Result<(), SemanticError> {
        for s in body {
            self.stmt(s, vars, depth)?;
        }
        Ok(())
    }

    fn stmt(
        &mut self,
        s: &Stmt,
        vars: &mut BTreeMap<String, VarState>,
        depth: u32,
    ) -> Result<(), SemanticError> {
        let line = s.line;
        match &s.kind {
            StmtKind::Sample { target, ann, dist } => {
                if self.params.contains(target)
                    || self.consts.contains_key(target)
                    || self.indices.contains(target)
                {
                    return Err(SemanticError::ShadowsBinding {
                        name: target.clone(),
                        line,
                    });
                }
                let (kind, shapes) = self.dist_shapes(dist, vars, line)?;
                self.info.sample_sites.insert(
                    s.id,
                    SampleSite {
                        var: target.clone(),
                        line,
                        ann: *ann,
                        shapes,
                        loop_depth: depth,
                    },
                );
                vars.insert(
                    target.clone(),
                    VarState {
                        kind: Some(kind),
                        bound_depth: depth,
                        observed: false,
                    },
                );
            }
            StmtKind::Observe { subject, datum } => {
                self.data_ref(datum, line)?;
                let st = vars.get_mut(subject).ok_or_else(|| SemanticError::Unbound {
                    name: subject.clone(),
                    line,
                })?;
                if st.observed {
                    return Err(SemanticError::DoubleObserve {
                        name: subject.clone(),
                        line,
                    });
                }
                if st.bound_depth < depth {
                    return Err(SemanticError::LoopCarriedObserve {
                        name: subject.clone(),
                        line,
                    });
                }
                st.observed = true;
                self.info
                    .observe_sites
                    .insert(s.id, (subject.clone(), line));
            }
            StmtKind::If {
                cond,
                then_branch,
                else_branch,
            } => {
                match vars.get(cond) {
                    Some(st) if st.kind == Some(DistKind::Bernoulli) => {}
                    Some(_) => {
                        return Err(SemanticError::CondNotBoolean {
                            name: cond.clone(),
                            line,
                        })
                    }
                    None => {
                        return Err(SemanticError::Unbound {
                            name: cond.clone(),
                            line,
                        })
                    }
                }
                // Every run performs the same observation sequence, so
                // branches must condition equally often.
                if self.observe_count(then_branch) != self.observe_count(else_branch) {
                    return Err(SemanticError::UnbalancedObserve { line });
                }
                let mut then_vars = vars.clone();
                let mut else_vars = vars.clone();
                self.stmts(then_branch, &mut then_vars, depth)?;
                self.stmts(else_branch, &mut else_vars, depth)?;
                *vars = merge_branches(then_vars, else_vars);
            }
            StmtKind::For {
                index,
                lo,
                hi,
                body,
            } => {
                self.loop_bound(lo, line)?;
                self.loop_bound(hi, line)?;
                self.indices.push(index.clone());
                self.info.max_loop_depth = self.info.max_loop_depth.max(depth + 1);
                let mut inner = vars.clone();
                self.stmts(body, &mut inner, depth + 1)?;
                self.indices.pop();
                // Loop bodies may run zero times, so their bindings stay local.
                // Observations of outer bindings still count on the outer path.
                for (name, st) in vars.iter_mut() {
                    if inner.get(name).map(|i| i.observed) == Some(true) {
                        st.observed = true;
                    }
                }
            }
        }
        Ok(())
    }

    /// Observations one execution of `body` performs. Inner branches are
    /// checked for balance where they occur, so either side counts here.
    fn observe_count(&self, body: &[Stmt]) -> u64 {
        body.iter()
            .map(|s| match &s.kind {
                StmtKind::Observe { .. } => 1,
                StmtKind::If { then_branch, .. } => self.observe_count(then_branch),
                StmtKind::For { lo, hi, body, .. } => {
                    let iters = match (self.const_bound(lo), self.const_bound(hi)) {
                        (Some(l), Some(h)) => (h - l + 1).max(0) as u64,
                        _ => 1,
                    };
                    iters * self.observe_count(body)
                }
                StmtKind::Sample { .. } => 0,
            })
            .sum()
    }

    fn const_bound(&self, e: &IntExpr) -> Option<i64> {
        match e {
            IntExpr::Lit(n) => Some(*n),
            IntExpr::Name(name) => self.consts.get(name).copied(),
        }
    }

    fn loop_bound(&self, e: &IntExpr, line: u32) -> Result<(), SemanticError> {
        match e {
            IntExpr::Lit(_) => Ok(()),
            IntExpr::Name(name) => {
                if self.consts.contains_key(name) || self.indices.contains(name) {
                    Ok(())
                } else {
                    Err(SemanticError::BadLoopBound {
                        name: name.clone(),
                        line,
                    })
                }
            }
        }
    }

    fn data_ref(&self, d: &DataRef, line: u32) -> Result<(), SemanticError> {
        if !self.params.contains(&d.param) {
            return Err(SemanticError::UnknownData {
                name: d.param.clone(),
                line,
            });
        }
        match &d.index {
            IntExpr::Lit(_) => Ok(()),
            IntExpr::Name(name) => {
                if self.indices.contains(name) || self.consts.contains_key(name) {
                    Ok(())
                } else {
                    Err(SemanticError::BadIndex {
                        name: name.clone(),
                        line,
                    })
                }
            }
        }
    }

    fn dist_shapes(
        &self,
        dist: &DistExpr,
        vars: &BTreeMap<String, VarState>,
        line: u32,
    ) -> Result<(DistKind, SiteShapes), SemanticError> {
        match dist {
            DistExpr::Gaussian { mean, variance } => {
                let (mean_shape, _) = self.shape(mean, vars, line)?;
                let (var_shape, var_val) = self.shape(variance, vars, line)?;
                if var_shape == ShapeClass::NonAffine {
                    return Err(SemanticError::VarianceNotAffine { line });
                }
                if let Some(v) = var_val {
                    if !(v > 0.0) {
                        return Err(SemanticError::NonPositiveVariance { value: v, line });
                    }
                }
                Ok((
                    DistKind::Gaussian,
                    SiteShapes::Gaussian {
                        mean: mean_shape,
                        variance: var_shape,
                    },
                ))
            }
            DistExpr::Bernoulli { prob } => {
                let (shape, val) = self.shape(prob, vars, line)?;
                if shape != ShapeClass::Fold {
                    return Err(SemanticError::ProbNotConst { line });
                }
                let p = val.expect("fold carries value");
                if !(0.0..=1.0).contains(&p) {
                    return Err(SemanticError::ProbOutOfRange { value: p, line });
                }
                Ok((DistKind::Bernoulli, SiteShapes::Bernoulli { prob: p }))
            }
        }
    }

    /// Classifies an expression and constant-folds it when possible.
    fn shape(
        &self,
        e: &NumExpr,
        vars: &BTreeMap<String, VarState>,
        line: u32,
    ) -> Result<(ShapeClass, Option<f64>), SemanticError> {
        match e {
            NumExpr::Lit(v) => Ok((ShapeClass::Fold, Some(*v))),
            NumExpr::Var(name) => {
                if vars.contains_key(name) {
                    Ok((ShapeClass::Affine, None))
                } else if let Some(v) = self.consts.get(name) {
                    Ok((ShapeClass::Fold, Some(*v as f64)))
                } else if self.indices.contains(name) {
                    Ok((ShapeClass::RuntimeConst, None))
                } else if self.params.contains(name) {
                    Err(SemanticError::DataAsScalar {
                        name: name.clone(),
                        line,
                    })
                } else {
                    Err(SemanticError::Unbound {
                        name: name.clone(),
                        line,
                    })
                }
            }
            NumExpr::Datum(d) => {
                self.data_ref(d, line)?;
                Ok((ShapeClass::RuntimeConst, None))
            }
            NumExpr::Add(a, b) | NumExpr::Sub(a, b) => {
                let (ca, va) = self.shape(a, vars, line)?;
                let (cb, vb) = self.shape(b, vars, line)?;
                let folded = match (va, vb) {
                    (Some(x), Some(y)) => Some(if matches!(e, NumExpr::Add(..)) {
                        x + y
                    } else {
                        x - y
                    }),
                    _ => None,
                };
                Ok((ca.max(cb), folded))
            }
            NumExpr::Mul(a, b) => {
                let (ca, va) = self.shape(a, vars, line)?;
                let (cb, vb) = self.shape(b, vars, line)?;
                let class = match (ca, cb) {
                    (ShapeClass::NonAffine, _) | (_, ShapeClass::NonAffine) => {
                        ShapeClass::NonAffine
                    }
                    // A product of two random quantities is no longer linear.
                    (ShapeClass::Affine, ShapeClass::Affine) => ShapeClass::NonAffine,
                    (a, b) => a.max(b),
                };
                let folded = match (va, vb) {
                    (Some(x), Some(y)) => Some(x * y),
                    _ => None,
                };
                Ok((class, folded))
            }
        }
    }
}

fn merge_branches(
    then_vars: BTreeMap<String, VarState>,
    else_vars: BTreeMap<String, VarState>,
) -> BTreeMap<String, VarState> {
    let mut merged = BTreeMap::new();
    for (name, t) in then_vars {
        if let Some(e) = else_vars.get(&name) {
            merged.insert(
                name,
                VarState {
                    kind: if t.kind == e.kind { t.kind } else { None },
                    bound_depth: t.bound_depth.min(e.bound_depth),
                    observed: t.observed || e.observed,
                },
            );
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse;
    use super::*;

    fn check_src(src: &str) -> Result<CheckedProgram, SemanticError> {
        check(parse(src).unwrap())
    }

    #[test]
    fn accepts_branch_bound_variable() {
        let src = r#"
function f(d) {
  o <- bernoulli(0.5);
  if (o) { y <- gaussian(0., 1.); } else { y <- gaussian(5., 1.); }
  observe(y, d[1]);
  o
}
"#;
        check_src(src).unwrap();
    }

    #[test]
    fn rejects_single_branch_escape() {
        let src = r#"
function f(d) {
  o <- bernoulli(0.5);
  if (o) { y <- gaussian(0., 1.); }
  observe(y, d[1]);
  o
}
"#;
        assert!(matches!(
            check_src(src),
            Err(SemanticError::Unbound { name, .. }) if name == "y"
        ));
    }

    #[test]
    fn rejects_double_observe() {
        let src = r#"
function f(d) {
  y <- gaussian(0., 1.);
  observe(y, d[1]);
  observe(y, d[2]);
  y
}
"#;
        assert!(matches!(
            check_src(src),
            Err(SemanticError::DoubleObserve { .. })
        ));
    }

    #[test]
    fn rejects_loop_carried_observe() {
        let src = r#"
const N = 3;
function f(d) {
  y <- gaussian(0., 1.);
  for i in 1 .. N {
    observe(y, d[i]);
  }
  y
}
"#;
        assert!(matches!(
            check_src(src),
            Err(SemanticError::LoopCarriedObserve { .. })
        ));
    }

    #[test]
    fn fresh_binding_per_iteration_is_fine() {
        let src = r#"
const N = 3;
function f(d) {
  x <- gaussian(0., 100.);
  for i in 1 .. N {
    x <- gaussian(x, 1.);
    y <- gaussian(x, 1.);
    observe(y, d[i]);
  }
  x
}
"#;
        let cp = check_src(src).unwrap();
        assert_eq!(cp.info.sample_sites.len(), 3);
        assert_eq!(cp.info.max_loop_depth, 1);
    }

    #[test]
    fn shape_classes() {
        let src = r#"
const N = 2;
function f(d) {
  a <- gaussian(0., 1.);
  b <- gaussian(2. * a + 1., 1.);
  c <- gaussian(a * b, 1.);
  e <- gaussian(d[1], d[2]);
  e
}
"#;
        let cp = check_src(src).unwrap();
        let shapes: Vec<_> = cp
            .info
            .sample_sites
            .values()
            .map(|s| match &s.shapes {
                SiteShapes::Gaussian { mean, .. } => *mean,
                _ => panic!(),
            })
            .collect();
        assert_eq!(
            shapes,
            vec![
                ShapeClass::Fold,
                ShapeClass::Affine,
                ShapeClass::NonAffine,
                ShapeClass::RuntimeConst
            ]
        );
    }

    #[test]
    fn bernoulli_prob_must_fold_into_range() {
        assert!(matches!(
            check_src("function f() { a <- gaussian(0., 1.); o <- bernoulli(a); o }"),
            Err(SemanticError::ProbNotConst { .. })
        ));
        assert!(matches!(
            check_src("function f() { o <- bernoulli(1.5); o }"),
            Err(SemanticError::ProbOutOfRange { .. })
        ));
    }

    #[test]
    fn variance_rules() {
        assert!(matches!(
            check_src("function f() { x <- gaussian(0., 0.); x }"),
            Err(SemanticError::NonPositiveVariance { .. })
        ));
        assert!(matches!(
            check_src(
                "function f() { a <- gaussian(0., 1.); b <- gaussian(0., 1.); x <- gaussian(0., a * b); x }"
            ),
            Err(SemanticError::VarianceNotAffine { .. })
        ));
        // Affine variance is allowed statically; the runtime realizes its
        // references before sampling.
        check_src("function f() { a <- gaussian(4., 1.); x <- gaussian(0., a + 1.); x }")
            .unwrap();
    }

    #[test]
    fn condition_must_be_bernoulli() {
        assert!(matches!(
            check_src(
                "function f() { x <- gaussian(0., 1.); if (x) { y <- gaussian(0., 1.); } else { y <- gaussian(1., 1.); } y }"
            ),
            Err(SemanticError::CondNotBoolean { .. })
        ));
    }

    #[test]
    fn rejects_unbalanced_branch_observes() {
        let src = r#"
function f(d) {
  o <- bernoulli(0.5);
  y <- gaussian(0., 1.);
  if (o) { observe(y, d[1]); } else { z <- gaussian(0., 1.); }
  o
}
"#;
        assert!(matches!(
            check_src(src),
            Err(SemanticError::UnbalancedObserve { .. })
        ));
    }

    #[test]
    fn result_must_escape() {
        assert!(matches!(
            check_src(
                "const N = 2; function f() { x <- gaussian(0., 1.); for i in 1 .. N { z <- gaussian(x, 1.); } z }"
            ),
            Err(SemanticError::UnboundResult { .. })
        ));
    }
}
