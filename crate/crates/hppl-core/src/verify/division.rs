//! Forward abstract interpretation certifying which variables the sampling
//! runtime will keep in closed form. A certificate must survive every
//! execution, so forced draws and the values they contaminate are tracked
//! as may-information.

use super::absdom::{merge_taint, AbsVal, Cell};
use crate::lang::ast::{Annotation, DistExpr, NumExpr, Stmt, StmtId, StmtKind};
use crate::lang::validate::{CheckedProgram, ShapeClass, SiteShapes};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteVerdict {
    Verified,
    Refuted { reason: StmtId },
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactReport {
    pub var: String,
    pub site: StmtId,
    pub line: u32,
    pub verdict: SiteVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DivisionReport {
    /// One row per Exact-annotated sample site, in statement order.
    pub sites: Vec<ExactReport>,
    /// Abstract class of each variable after the whole program.
    pub final_env: BTreeMap<String, String>,
}

impl DivisionReport {
    pub fn all_verified(&self) -> bool {
        self.sites
            .iter()
            .all(|s| s.verdict == SiteVerdict::Verified)
    }
}

type Env = BTreeMap<String, Cell>;

struct Analyzer<'p> {
    cp: &'p CheckedProgram,
    /// Exact sample sites per variable name; taint and forcing refute by
    /// name, which over-approximates rebinding.
    exact_sites: BTreeMap<&'p str, Vec<StmtId>>,
    binding_site: BTreeMap<String, StmtId>,
    refuted: BTreeMap<StmtId, StmtId>,
    saw_top: BTreeSet<StmtId>,
    incomplete: bool,
    indices: Vec<&'p str>,
    ctx: Vec<StmtId>,
}

impl<'p> Analyzer<'p> {
    fn ctx_taint(&self) -> Option<StmtId> {
        self.ctx.last().copied()
    }

    fn refute(&mut self, name: &str, reason: StmtId) {
        if let Some(sites) = self.exact_sites.get(name) {
            for site in sites {
                self.refuted.entry(*site).or_insert(reason);
            }
        }
    }

    fn refs(&self, e: &NumExpr, out: &mut BTreeSet<String>) {
        match e {
            NumExpr::Lit(_) | NumExpr::Datum(_) => {}
            NumExpr::Var(name) => {
                let shadowed = self.cp.program.consts.contains_key(name)
                    || self.indices.iter().any(|i| *i == name.as_str());
                if !shadowed {
                    out.insert(name.clone());
                }
            }
            NumExpr::Add(a, b) | NumExpr::Sub(a, b) | NumExpr::Mul(a, b) => {
                self.refs(a, out);
                self.refs(b, out);
            }
        }
    }

    /// The runtime samples `name` here. Forcing an untracked value may
    /// force anything it reaches; forcing a linear-Gaussian value folds the
    /// draw into its ancestors. Either way the drawn value flows into every
    /// variable still referencing `name`.
    fn force(&mut self, name: &str, env: &mut Env, site: StmtId) {
        let Some(cell) = env.get(name).cloned() else {
            self.refute(name, site);
            return;
        };
        if cell.val == AbsVal::Realized {
            return;
        }
        let deps = cell.val.deps();
        let was_top = matches!(cell.val, AbsVal::Top { .. });
        {
            let c = env.get_mut(name).expect("bound");
            c.val = AbsVal::Realized;
            c.taint = merge_taint(c.taint, Some(site));
        }
        self.refute(name, site);
        for r in &deps {
            if was_top {
                self.force(r, env, site);
            } else {
                self.taint(r, env, site);
            }
        }
        let mut seen = BTreeSet::new();
        self.taint_dependents(name, env, site, &mut seen);
    }

    fn taint_dependents(
        &mut self,
        name: &str,
        env: &mut Env,
        src: StmtId,
        seen: &mut BTreeSet<String>,
    ) {
        let dependents: Vec<String> = env
            .iter()
            .filter(|(k, c)| c.val.deps().contains(name) && seen.insert((*k).clone()))
            .map(|(k, _)| k.clone())
            .collect();
        for d in dependents {
            self.taint(&d, env, src);
            self.taint_dependents(&d, env, src, seen);
        }
    }

    fn taint(&mut self, name: &str, env: &mut Env, src: StmtId) {
        if let Some(cell) = env.get_mut(name) {
            cell.taint = merge_taint(cell.taint, Some(src));
        }
        self.refute(name, src);
    }

    fn exec_seq(&mut self, env: &mut Env, stmts: &'p [Stmt]) {
        for stmt in stmts {
            self.exec(env, stmt);
        }
    }

    fn exec(&mut self, env: &mut Env, stmt: &'p Stmt) {
        match &stmt.kind {
            StmtKind::Sample { target, ann, dist } => {
                self.exec_sample(env, stmt, target, *ann, dist)
            }
            StmtKind::Observe { subject, .. } => self.exec_observe(env, stmt, subject),
            StmtKind::If {
                cond,
                then_branch,
                else_branch,
            } => {
                let val = env.get(cond).map(|c| c.val.clone());
                match val {
                    Some(AbsVal::Discrete) | Some(AbsVal::Top { .. }) => {
                        self.force(cond, env, stmt.id)
                    }
                    _ => {}
                }
                let taint = env.get(cond).and_then(|c| c.taint);
                if let Some(src) = taint {
                    self.ctx.push(src);
                }
                let mut then_env = env.clone();
                self.exec_seq(&mut then_env, then_branch);
                let mut else_env = env.clone();
                self.exec_seq(&mut else_env, else_branch);
                if taint.is_some() {
                    self.ctx.pop();
                }
                *env = join_env(&then_env, &else_env);
            }
            StmtKind::For { index, body, .. } => {
                self.indices.push(index);
                let mut head = env.clone();
                let mut rounds = 0;
                loop {
                    let mut out = head.clone();
                    self.exec_seq(&mut out, body);
                    let joined = join_env(&head, &out);
                    if joined == head {
                        break;
                    }
                    head = joined;
                    rounds += 1;
                    if rounds > 64 {
                        self.incomplete = true;
                        break;
                    }
                }
                self.indices.pop();
                *env = head;
            }
        }
    }

    fn exec_sample(
        &mut self,
        env: &mut Env,
        stmt: &Stmt,
        target: &str,
        ann: Annotation,
        dist: &DistExpr,
    ) {
        let shapes = &self.cp.info.sample_sites[&stmt.id].shapes;
        let mut cell = match dist {
            DistExpr::Bernoulli { .. } => Cell {
                val: AbsVal::Discrete,
                taint: self.ctx_taint(),
            },
            DistExpr::Gaussian { mean, variance } => {
                let mut taint = self.ctx_taint();
                let SiteShapes::Gaussian {
                    mean: mean_class,
                    variance: var_class,
                } = shapes
                else {
                    unreachable!("gaussian site")
                };
                if *var_class != ShapeClass::Fold {
                    let mut vrefs = BTreeSet::new();
                    self.refs(variance, &mut vrefs);
                    for r in &vrefs {
                        self.force(r, env, stmt.id);
                        taint = merge_taint(taint, Some(stmt.id));
                    }
                }
                let mut mrefs = BTreeSet::new();
                self.refs(mean, &mut mrefs);
                if *mean_class == ShapeClass::NonAffine {
                    for r in &mrefs {
                        self.force(r, env, stmt.id);
                    }
                    Cell {
                        val: AbsVal::Top {
                            deps: BTreeSet::new(),
                        },
                        taint: merge_taint(taint, Some(stmt.id)),
                    }
                } else {
                    let mut deps = BTreeSet::new();
                    let mut exact_form = true;
                    for r in &mrefs {
                        let c = env.get(r).cloned().unwrap_or(Cell::clean(AbsVal::Top {
                            deps: BTreeSet::new(),
                        }));
                        taint = merge_taint(taint, c.taint);
                        match c.val {
                            AbsVal::LinGauss { deps: d } => {
                                deps.insert(r.clone());
                                deps.extend(d);
                            }
                            AbsVal::Realized => {}
                            AbsVal::Discrete | AbsVal::Bot => {
                                exact_form = false;
                                deps.insert(r.clone());
                            }
                            AbsVal::Top { deps: d } => {
                                exact_form = false;
                                deps.insert(r.clone());
                                deps.extend(d);
                            }
                        }
                    }
                    if exact_form {
                        Cell {
                            val: AbsVal::lin(deps),
                            taint,
                        }
                    } else {
                        Cell {
                            val: AbsVal::Top { deps },
                            taint,
                        }
                    }
                }
            }
        };
        match ann {
            Annotation::Approx => {
                // The draw happens here, sanctioned. Any discrete or
                // untracked value the hoist reaches is sampled with it, and
                // conditioning swaps carry the value's taint into every
                // ancestor it still references.
                let deps = cell.val.deps();
                for r in &deps {
                    if matches!(
                        env.get(r).map(|c| &c.val),
                        Some(AbsVal::Discrete) | Some(AbsVal::Top { .. })
                    ) {
                        self.force(r, env, stmt.id);
                        // The drawn value folds the forced draw into itself.
                        cell.taint = merge_taint(cell.taint, env.get(r).and_then(|c| c.taint));
                    }
                }
                if let Some(src) = cell.taint {
                    for r in &deps {
                        self.taint(r, env, src);
                    }
                }
                cell.val = AbsVal::Realized;
            }
            Annotation::Exact => {
                if matches!(cell.val, AbsVal::Top { .. }) {
                    self.saw_top.insert(stmt.id);
                }
                if let Some(src) = cell.taint {
                    self.refuted.entry(stmt.id).or_insert(src);
                }
            }
            Annotation::None => {}
        }
        self.binding_site.insert(target.to_string(), stmt.id);
        env.insert(target.to_string(), cell);
    }

    fn exec_observe(&mut self, env: &mut Env, stmt: &Stmt, subject: &str) {
        let cell = env.get(subject).cloned().unwrap_or(Cell::clean(AbsVal::Top {
            deps: BTreeSet::new(),
        }));
        match cell.val {
            AbsVal::Discrete => {
                let c = env.get_mut(subject).expect("bound");
                c.val = AbsVal::Realized;
                c.taint = merge_taint(c.taint, self.ctx_taint());
                if let Some(src) = env[subject].taint {
                    let mut seen = BTreeSet::new();
                    self.taint_dependents(subject, env, src, &mut seen);
                }
            }
            AbsVal::LinGauss { deps } => {
                let mut t = merge_taint(cell.taint, self.ctx_taint());
                for r in &deps {
                    t = merge_taint(t, env.get(r).and_then(|c| c.taint));
                }
                if let Some(src) = t {
                    // Conditioning rewrites the subject together with its
                    // ancestors, and folds the subject's tainted value into
                    // everything still referencing it.
                    self.taint(subject, env, src);
                    for r in &deps {
                        self.taint(r, env, src);
                    }
                    let mut seen = BTreeSet::new();
                    self.taint_dependents(subject, env, src, &mut seen);
                }
                let c = env.get_mut(subject).expect("bound");
                c.val = AbsVal::Realized;
            }
            AbsVal::Top { .. } => {
                self.force(subject, env, stmt.id);
            }
            AbsVal::Realized | AbsVal::Bot => {}
        }
    }
}

fn join_env(a: &Env, b: &Env) -> Env {
    let mut out = a.clone();
    for (k, cell) in b {
        out.entry(k.clone())
            .and_modify(|c| *c = c.join(cell))
            .or_insert_with(|| cell.clone());
    }
    out
}

/// Certifies each Exact annotation against the deterministic sampling
/// policy: Verified means no execution of this runtime can draw the
/// variable or fold an unsanctioned draw into it.
pub fn analyze_division(cp: &CheckedProgram) -> DivisionReport {
    let mut exact_sites: BTreeMap<&str, Vec<StmtId>> = BTreeMap::new();
    for (id, site) in &cp.info.sample_sites {
        if site.ann == Annotation::Exact {
            exact_sites.entry(site.var.as_str()).or_default().push(*id);
        }
    }
    let mut a = Analyzer {
        cp,
        exact_sites,
        binding_site: BTreeMap::new(),
        refuted: BTreeMap::new(),
        saw_top: BTreeSet::new(),
        incomplete: false,
        indices: Vec::new(),
        ctx: Vec::new(),
    };
    let mut env = Env::new();
    a.exec_seq(&mut env, &cp.program.body);

    // Returning the result marginalizes it: discrete or untracked values
    // its mean still reaches are drawn, and the conditioning swaps spread
    // any taint across the whole ancestor chain.
    let result = cp.program.result.clone();
    if let Some(cell) = env.get(&result).cloned() {
        match cell.val {
            AbsVal::Top { deps } => {
                if let Some(site) = a.binding_site.get(&result).copied() {
                    let mut t = cell.taint;
                    for r in &deps {
                        if matches!(
                            env.get(r).map(|c| &c.val),
                            Some(AbsVal::Discrete) | Some(AbsVal::Top { .. })
                        ) {
                            a.force(r, &mut env, site);
                        }
                        t = merge_taint(t, env.get(r).and_then(|c| c.taint));
                    }
                    a.taint(&result, &mut env, site);
                    if let Some(src) = t {
                        for r in &deps {
                            a.taint(r, &mut env, src);
                        }
                    }
                }
            }
            AbsVal::LinGauss { deps } => {
                let mut t = cell.taint;
                for r in &deps {
                    t = merge_taint(t, env.get(r).and_then(|c| c.taint));
                }
                if let Some(src) = t {
                    a.taint(&result, &mut env, src);
                    for r in &deps {
                        a.taint(r, &mut env, src);
                    }
                }
            }
            _ => {}
        }
    }

    let mut sites = Vec::new();
    for (id, site) in &cp.info.sample_sites {
        if site.ann != Annotation::Exact {
            continue;
        }
        let verdict = if let Some(reason) = a.refuted.get(id) {
            SiteVerdict::Refuted { reason: *reason }
        } else if a.incomplete || a.saw_top.contains(id) {
            SiteVerdict::Unknown
        } else {
            SiteVerdict::Verified
        };
        sites.push(ExactReport {
            var: site.var.clone(),
            site: *id,
            line: site.line,
            verdict,
        });
    }
    let final_env = env
        .iter()
        .map(|(k, c)| {
            let mut d = c.val.describe();
            if c.taint.is_some() {
                d.push_str(" (tainted)");
            }
            (k.clone(), d)
        })
        .collect();
    DivisionReport { sites, final_env }
}
