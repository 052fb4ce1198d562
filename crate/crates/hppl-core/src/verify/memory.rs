//! Bounded-memory certification. The program is executed abstractly on the
//! real symbolic state with placeholder numbers: draws and observations use
//! fixed values, both branches of every conditional are followed, and loops
//! run until consecutive iteration-end states agree on a canonical
//! signature. Node identity is erased by labeling each node with its origin
//! statement and age, so a stable signature means the live set has reached a
//! steady shape regardless of how many iterations remain.

use crate::lang::ast::{Annotation, DistExpr, NumExpr, Stmt, StmtId, StmtKind};
use crate::lang::validate::{CheckedProgram, SiteShapes};
use crate::symbolic::{AffineExpr, Hoisted, NodeId, Origin, SymDist, SymError, SymbolicState};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemConfig {
    /// Largest certifiable consumption distance, in loop iterations.
    pub m_max: usize,
    /// Iterations simulated before giving up on stabilization.
    pub k_max: usize,
}

impl Default for MemConfig {
    fn default() -> Self {
        MemConfig { m_max: 3, k_max: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemoryVerdict {
    /// Live nodes never exceed `bound`, and every loop-born node is
    /// realized or folded away within `m` iterations of its birth.
    Bounded { bound: usize, m: usize },
    /// A node born at `witness_site` outlives every certifiable distance
    /// while the live set keeps growing.
    Unbounded {
        witness_var: String,
        witness_site: StmtId,
    },
    Unknown,
}

struct Metrics {
    peak: usize,
    m_seen: usize,
    /// Completed-iteration counter, monotone across nested loops. Nodes
    /// born at clock 0 precede every loop and are exempt from `m`.
    clock: usize,
}

type MemResult<T> = Result<T, MemoryVerdict>;

fn unknown<T>(r: Result<T, SymError>) -> MemResult<T> {
    r.map_err(|_| MemoryVerdict::Unknown)
}

#[derive(Clone)]
struct Sim<'p> {
    cp: &'p CheckedProgram,
    state: SymbolicState,
    env: BTreeMap<&'p str, NodeId>,
    indices: Vec<&'p str>,
    birth: BTreeMap<NodeId, usize>,
}

impl<'p> Sim<'p> {
    fn new(cp: &'p CheckedProgram) -> Self {
        Sim {
            cp,
            state: SymbolicState::new(),
            env: BTreeMap::new(),
            indices: Vec::new(),
            birth: BTreeMap::new(),
        }
    }

    fn live(&self, id: NodeId) -> bool {
        self.state.node(id).is_some()
    }

    fn eval(&mut self, e: &NumExpr, mx: &mut Metrics) -> MemResult<AffineExpr> {
        match e {
            NumExpr::Lit(v) => Ok(AffineExpr::konst(*v)),
            NumExpr::Datum(_) => Ok(AffineExpr::konst(1.0)),
            NumExpr::Var(name) => {
                if let Some(c) = self.cp.program.consts.get(name) {
                    return Ok(AffineExpr::konst(*c as f64));
                }
                if self.indices.iter().any(|i| *i == name.as_str()) {
                    return Ok(AffineExpr::konst(1.0));
                }
                match self.env.get(name.as_str()) {
                    Some(&id) if self.live(id) => Ok(AffineExpr::node(id)),
                    _ => Ok(AffineExpr::konst(0.0)),
                }
            }
            NumExpr::Add(a, b) => Ok(self.eval(a, mx)?.plus(&self.eval(b, mx)?)),
            NumExpr::Sub(a, b) => Ok(self.eval(a, mx)?.minus(&self.eval(b, mx)?)),
            NumExpr::Mul(a, b) => {
                let ea = self.eval(a, mx)?;
                let eb = self.eval(b, mx)?;
                if let Some(c) = ea.constant() {
                    return Ok(eb.scaled(c));
                }
                if let Some(c) = eb.constant() {
                    return Ok(ea.scaled(c));
                }
                for id in ea.refs().chain(eb.refs()).collect::<Vec<_>>() {
                    self.force(id, mx)?;
                }
                Ok(AffineExpr::konst(0.0))
            }
        }
    }

    /// Realizes `id` with a placeholder value, forcing discrete blockers on
    /// the way, exactly as the runtime would.
    fn force(&mut self, id: NodeId, mx: &mut Metrics) -> MemResult<()> {
        if !self.live(id) {
            return Ok(());
        }
        loop {
            match unknown(self.state.hoist(id))? {
                Hoisted::Ok => break,
                Hoisted::Blocked { by } => self.force(by, mx)?,
            }
        }
        self.consume(id, mx);
        unknown(self.state.realize(id, 0.0))
    }

    fn consume(&mut self, id: NodeId, mx: &mut Metrics) {
        if let Some(b) = self.birth.remove(&id) {
            if b >= 1 {
                mx.m_seen = mx.m_seen.max(mx.clock.saturating_sub(b));
            }
        }
    }

    fn sample(&mut self, stmt: &'p Stmt, mx: &mut Metrics) -> MemResult<()> {
        let StmtKind::Sample { target, ann, dist } = &stmt.kind else {
            unreachable!()
        };
        let sym = match dist {
            DistExpr::Gaussian { mean, variance } => {
                let v = self.eval(variance, mx)?;
                for id in v.refs().collect::<Vec<_>>() {
                    self.force(id, mx)?;
                }
                let mean = self.eval(mean, mx)?;
                SymDist::Gaussian { mean, var: 1.0 }
            }
            DistExpr::Bernoulli { .. } => {
                let SiteShapes::Bernoulli { prob } = self.cp.info.sample_sites[&stmt.id].shapes
                else {
                    unreachable!("bernoulli site")
                };
                SymDist::Bernoulli { p: prob.clamp(0.0, 1.0) }
            }
        };
        let origin = Origin {
            var: target.clone(),
            stmt: stmt.id,
            line: stmt.line,
            iteration: None,
        };
        let id = unknown(self.state.assume(origin, *ann, sym, false))?;
        self.birth.insert(id, mx.clock);
        self.env.insert(target.as_str(), id);
        mx.peak = mx.peak.max(self.state.live_count());
        if *ann == Annotation::Approx {
            self.force(id, mx)?;
        }
        Ok(())
    }

    fn observe(&mut self, subject: &str, mx: &mut Metrics) -> MemResult<()> {
        let Some(&id) = self.env.get(subject) else {
            return Ok(());
        };
        self.force(id, mx)
    }

    fn iteration_end(&mut self, mx: &mut Metrics) {
        let roots: BTreeSet<NodeId> = self
            .env
            .values()
            .copied()
            .filter(|&id| self.live(id))
            .collect();
        let before: BTreeSet<NodeId> = self.state.ids().collect();
        self.state.reclaim(&roots);
        for id in before {
            if !self.live(id) {
                self.consume(id, mx);
            }
        }
    }

    /// Identity-free rendering of the live graph and environment.
    fn signature(&self, mx: &Metrics, cfg: &MemConfig) -> String {
        let clamp = cfg.m_max + 1;
        let label = |id: NodeId| -> String {
            let n = self.state.node(id).expect("live node");
            let age = mx.clock.saturating_sub(self.birth.get(&id).copied().unwrap_or(0));
            format!("s{}a{}", n.origin.stmt.0, age.min(clamp))
        };
        let mut parts: Vec<String> = Vec::new();
        for id in self.state.ids().collect::<Vec<_>>() {
            let n = self.state.node(id).expect("live node");
            let kind = if n.dist.is_gaussian() { 'g' } else { 'b' };
            let mut parents: Vec<String> =
                self.state.parents_of(id).into_iter().map(label).collect();
            parents.sort();
            parts.push(format!("{}{}<{}", kind, label(id), parents.join(",")));
        }
        parts.sort();
        let mut env: Vec<String> = self
            .env
            .iter()
            .map(|(k, &id)| {
                if self.live(id) {
                    format!("{}={}", k, label(id))
                } else {
                    format!("{}=.", k)
                }
            })
            .collect();
        env.sort();
        format!("{}|{}", parts.join(";"), env.join(";"))
    }

    fn oldest_overage(&self, mx: &Metrics, cfg: &MemConfig) -> Option<(String, StmtId)> {
        let mut worst: Option<(usize, NodeId)> = None;
        for (id, &b) in &self.birth {
            if b == 0 || !self.live(*id) {
                continue;
            }
            let age = mx.clock.saturating_sub(b);
            if age > cfg.m_max && worst.map_or(true, |(w, _)| age > w) {
                worst = Some((age, *id));
            }
        }
        worst.map(|(_, id)| {
            let o = &self.state.node(id).expect("live node").origin;
            (o.var.clone(), o.stmt)
        })
    }
}

fn exec_block<'p>(
    sims: Vec<Sim<'p>>,
    stmts: &'p [Stmt],
    mx: &mut Metrics,
    cfg: &MemConfig,
) -> MemResult<Vec<Sim<'p>>> {
    let mut cur = sims;
    for stmt in stmts {
        cur = exec(cur, stmt, mx, cfg)?;
        if cur.len() > 64 {
            return Err(MemoryVerdict::Unknown);
        }
    }
    Ok(cur)
}

fn exec<'p>(
    mut sims: Vec<Sim<'p>>,
    stmt: &'p Stmt,
    mx: &mut Metrics,
    cfg: &MemConfig,
) -> MemResult<Vec<Sim<'p>>> {
    match &stmt.kind {
        StmtKind::Sample { .. } => {
            for sim in &mut sims {
                sim.sample(stmt, mx)?;
            }
            Ok(sims)
        }
        StmtKind::Observe { subject, .. } => {
            for sim in &mut sims {
                sim.observe(subject, mx)?;
            }
            Ok(sims)
        }
        StmtKind::If {
            cond,
            then_branch,
            else_branch,
        } => {
            let mut out = Vec::new();
            for mut sim in sims {
                if let Some(&id) = sim.env.get(cond.as_str()) {
                    sim.force(id, mx)?;
                }
                out.extend(exec_block(vec![sim.clone()], then_branch, mx, cfg)?);
                out.extend(exec_block(vec![sim], else_branch, mx, cfg)?);
            }
            Ok(out)
        }
        StmtKind::For { index, body, .. } => {
            let mut out = Vec::new();
            for sim in sims {
                out.push(run_loop(sim, index, body, mx, cfg)?);
            }
            Ok(out)
        }
    }
}

fn run_loop<'p>(
    mut sim: Sim<'p>,
    index: &'p str,
    body: &'p [Stmt],
    mx: &mut Metrics,
    cfg: &MemConfig,
) -> MemResult<Sim<'p>> {
    sim.indices.push(index);
    let mut prev_sig: Option<String> = None;
    let mut counts: Vec<usize> = Vec::new();
    for _ in 0..cfg.k_max {
        mx.clock += 1;
        let forks = exec_block(vec![sim], body, mx, cfg)?;
        let mut sigs = BTreeSet::new();
        let mut ends = Vec::with_capacity(forks.len());
        for mut f in forks {
            f.iteration_end(mx);
            sigs.insert(f.signature(mx, cfg));
            ends.push(f);
        }
        if sigs.len() != 1 {
            // Alternative branches leave structurally different residue, so
            // no single steady shape exists.
            return Err(MemoryVerdict::Unknown);
        }
        sim = ends.into_iter().next().expect("at least one fork");
        let sig = sigs.into_iter().next().expect("one signature");
        if prev_sig.as_deref() == Some(sig.as_str()) {
            sim.indices.pop();
            return Ok(sim);
        }
        counts.push(sim.state.live_count());
        let n = counts.len();
        if n >= 3 && counts[n - 1] > counts[n - 2] && counts[n - 2] > counts[n - 3] {
            if let Some((var, site)) = sim.oldest_overage(mx, cfg) {
                return Err(MemoryVerdict::Unbounded {
                    witness_var: var,
                    witness_site: site,
                });
            }
        }
        prev_sig = Some(sig);
    }
    Err(MemoryVerdict::Unknown)
}

/// Certifies that the live symbolic state stays bounded independently of
/// loop lengths, reporting the peak size and the consumption distance, or a
/// witness of growth.
pub fn analyze_memory(cp: &CheckedProgram, cfg: &MemConfig) -> MemoryVerdict {
    let mut mx = Metrics {
        peak: 0,
        m_seen: 0,
        clock: 0,
    };
    match exec_block(vec![Sim::new(cp)], &cp.program.body, &mut mx, cfg) {
        Err(v) => v,
        Ok(_) => {
            if mx.m_seen > cfg.m_max {
                MemoryVerdict::Unknown
            } else {
                MemoryVerdict::Bounded {
                    bound: mx.peak,
                    m: mx.m_seen,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::load;

    fn checked(src: &str) -> CheckedProgram {
        load(src, &BTreeMap::new()).expect("test program loads")
    }

    fn verdict(src: &str) -> MemoryVerdict {
        analyze_memory(&checked(src), &MemConfig::default())
    }

    #[test]
    fn branchy_filter_is_bounded_with_unit_consumption() {
        let v = verdict(
            "const N = 5;\nfunction outlier(yobs) {\n  x <- gaussian(0., 100.);\n  for i in 1 .. N {\n    x <- exact gaussian(x, 1.);\n    o <- approx bernoulli(0.1);\n    if (o) { y <- gaussian(0., 100.); }\n    else { y <- gaussian(x, 1.); }\n    observe(y, yobs[i]);\n  };\n  x\n}\n",
        );
        assert_eq!(v, MemoryVerdict::Bounded { bound: 3, m: 1 });
    }

    #[test]
    fn straight_chain_is_bounded() {
        let v = verdict(
            "const N = 50;\nfunction kalman(yobs) {\n  x <- exact gaussian(0., 100.);\n  for i in 1 .. N {\n    x <- exact gaussian(x, 1.);\n    y <- gaussian(x, 1.);\n    observe(y, yobs[i]);\n  };\n  x\n}\n",
        );
        assert_eq!(v, MemoryVerdict::Bounded { bound: 3, m: 1 });
    }

    #[test]
    fn same_iteration_consumption_has_zero_distance() {
        let v = verdict(
            "const N = 8;\nfunction plate(d) {\n  t <- gaussian(0., 1.);\n  for i in 1 .. N {\n    y <- gaussian(t, 1.);\n    observe(y, d[i]);\n  };\n  t\n}\n",
        );
        assert_eq!(v, MemoryVerdict::Bounded { bound: 2, m: 0 });
    }

    #[test]
    fn anchored_walk_grows_without_bound() {
        let src = "const N = 6;\nfunction drift(d) {\n  x0 <- gaussian(0., 1.);\n  x <- gaussian(x0, 1.);\n  for i in 1 .. N {\n    x <- gaussian(x, 1.);\n  };\n  observe(x0, d[1]);\n  x\n}\n";
        let cp = checked(src);
        let v = analyze_memory(&cp, &MemConfig::default());
        let MemoryVerdict::Unbounded {
            witness_var,
            witness_site,
        } = v
        else {
            panic!("expected growth, got {v:?}");
        };
        assert_eq!(witness_var, "x");
        let site = &cp.info.sample_sites[&witness_site];
        assert_eq!(site.loop_depth, 1, "witness born inside the loop");
    }

    #[test]
    fn asymmetric_branch_residue_is_unknown() {
        let v = verdict(
            "const N = 4;\nfunction regime(d) {\n  m <- gaussian(0., 10.);\n  for i in 1 .. N {\n    o <- approx bernoulli(0.3);\n    if (o) { m <- gaussian(m, 1.); }\n    else { m <- gaussian(0., 1.); }\n    y <- gaussian(m, 1.);\n    observe(y, d[i]);\n  };\n  m\n}\n",
        );
        assert_eq!(v, MemoryVerdict::Unknown);
    }

    #[test]
    fn loop_free_program_is_bounded_by_its_width() {
        let v = verdict(
            "function pair(d) {\n  a <- gaussian(0., 1.);\n  b <- gaussian(a, 1.);\n  observe(b, d[1]);\n  a\n}\n",
        );
        assert_eq!(v, MemoryVerdict::Bounded { bound: 2, m: 0 });
    }

    #[test]
    fn verdict_ignores_the_loop_length() {
        for n in [10, 1000] {
            let cp = load(
                "const N = 5;\nfunction plate(d) {\n  t <- gaussian(0., 1.);\n  for i in 1 .. N {\n    y <- gaussian(t, 1.);\n    observe(y, d[i]);\n  };\n  t\n}\n",
                &BTreeMap::from([("N".to_string(), n)]),
            )
            .unwrap();
            assert_eq!(
                analyze_memory(&cp, &MemConfig::default()),
                MemoryVerdict::Bounded { bound: 2, m: 0 }
            );
        }
    }
}
