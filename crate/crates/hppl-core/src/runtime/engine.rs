//! Particle executor. Each particle walks the program keeping a symbolic
//! joint state, drawing concrete values only where symbolic form cannot be
//! kept: annotated approximations, variance dependencies, non-affine means,
//! branch conditions, and Bernoulli ancestors blocking an observation.
//! Particles synchronize at observation points for resampling.

use super::data::DataTable;
use super::resample::{logsumexp, normalize_log_weights, systematic};
use super::results::{
    Component, Diagnostics, InferError, Posterior, RunResult, SampledVar, Violation,
    ViolationKind,
};
use super::rng::SlotRng;
use crate::lang::ast::{Annotation, DataRef, DistExpr, IntExpr, NumExpr, Stmt, StmtKind};
use crate::lang::validate::{CheckedProgram, SiteShapes};
use crate::symbolic::{AffineExpr, Hoisted, Marginal, NodeId, Origin, SymDist, SymbolicState};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    /// Keeps any affine-Gaussian structure symbolic, regardless of shape.
    Ssi,
    /// Chain-restricted: a node keeps at most one symbolic parent, and that
    /// parent must be Gaussian. Extra parents are sampled on the spot.
    Ds,
}

impl std::fmt::Display for EngineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EngineKind::Ssi => "ssi",
            EngineKind::Ds => "ds",
        })
    }
}

impl std::str::FromStr for EngineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ssi" => Ok(EngineKind::Ssi),
            "ds" => Ok(EngineKind::Ds),
            other => Err(format!("unknown engine `{other}` (expected ssi or ds)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub engine: EngineKind,
    pub particles: usize,
    pub seed: u64,
    /// Resample when ESS drops below this fraction of the particle count.
    pub resample_threshold: f64,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            engine: EngineKind::Ssi,
            particles: 1000,
            seed: 0,
            resample_threshold: 0.5,
            parallel: true,
        }
    }
}

/// Source of concrete values. The sampling runtime draws from per-slot
/// streams; exact enumeration scripts the Bernoulli choices instead.
pub trait Chooser: Send {
    fn gaussian(&mut self, mean: f64, sd: f64) -> Result<f64, InferError>;
    /// Returns the drawn value and a log-weight correction for the choice.
    fn bernoulli(&mut self, p: f64) -> Result<(f64, f64), InferError>;
}

#[derive(Debug, Clone)]
pub struct RngChooser {
    rng: SlotRng,
}

impl RngChooser {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngChooser {
            rng: SlotRng::new(seed, stream),
        }
    }
}

impl Chooser for RngChooser {
    fn gaussian(&mut self, mean: f64, sd: f64) -> Result<f64, InferError> {
        Ok(mean + sd * self.rng.std_normal())
    }

    fn bernoulli(&mut self, p: f64) -> Result<(f64, f64), InferError> {
        let v = if self.rng.uniform() < p { 1.0 } else { 0.0 };
        Ok((v, 0.0))
    }
}

struct Ctx<'p> {
    cp: &'p CheckedProgram,
    data: &'p DataTable,
    engine: EngineKind,
}

#[derive(Clone)]
enum Frame<'p> {
    Seq {
        stmts: &'p [Stmt],
        idx: usize,
    },
    Loop {
        index: &'p str,
        body: &'p [Stmt],
        next: i64,
        hi: i64,
        running: bool,
    },
    ExitBranch {
        tainted: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Park {
    Observed,
    Done,
}

#[derive(Clone)]
pub(crate) struct Particle<'p> {
    frames: Vec<Frame<'p>>,
    env: BTreeMap<&'p str, NodeId>,
    idx: Vec<(&'p str, i64)>,
    state: SymbolicState,
    /// Values of realized nodes still reachable through the environment,
    /// with the taint of the value.
    realized: BTreeMap<NodeId, (f64, bool)>,
    pub(crate) logw: f64,
    taint_depth: u32,
    sampled: BTreeSet<SampledVar>,
    violations: Vec<Violation>,
    live_trace: Vec<usize>,
    peak_live: usize,
}

impl<'p> Particle<'p> {
    pub(crate) fn new(cp: &'p CheckedProgram) -> Self {
        Particle {
            frames: vec![Frame::Seq {
                stmts: &cp.program.body,
                idx: 0,
            }],
            env: BTreeMap::new(),
            idx: Vec::new(),
            state: SymbolicState::new(),
            realized: BTreeMap::new(),
            logw: 0.0,
            taint_depth: 0,
            sampled: BTreeSet::new(),
            violations: Vec::new(),
            live_trace: Vec::new(),
            peak_live: 0,
        }
    }

    fn ctx_tainted(&self) -> bool {
        self.taint_depth > 0
    }

    fn touch(&mut self) {
        self.peak_live = self.peak_live.max(self.state.live_count());
    }

    fn drain_contaminations(&mut self) {
        for origin in self.state.take_contaminations() {
            self.violations.push(Violation {
                var: origin.var,
                line: origin.line,
                iteration: origin.iteration,
                kind: ViolationKind::Contaminated,
            });
        }
    }

    /// Runs until the next observation completes or the program ends.
    fn run_segment<C: Chooser>(
        &mut self,
        ctx: &Ctx<'p>,
        ch: &mut C,
    ) -> Result<Park, InferError> {
        loop {
            let Some(frame) = self.frames.pop() else {
                return Ok(Park::Done);
            };
            match frame {
                Frame::Seq { stmts, idx } => {
                    if idx >= stmts.len() {
                        continue;
                    }
                    self.frames.push(Frame::Seq {
                        stmts,
                        idx: idx + 1,
                    });
                    let parked = self.exec(&stmts[idx], ctx, ch)?;
                    if parked {
                        return Ok(Park::Observed);
                    }
                }
                Frame::ExitBranch { tainted } => {
                    if tainted {
                        self.taint_depth -= 1;
                    }
                }
                Frame::Loop {
                    index,
                    body,
                    next,
                    hi,
                    running,
                } => {
                    if running {
                        self.iteration_end();
                        self.idx.pop();
                    }
                    if next <= hi {
                        self.idx.push((index, next));
                        self.frames.push(Frame::Loop {
                            index,
                            body,
                            next: next + 1,
                            hi,
                            running: true,
                        });
                        self.frames.push(Frame::Seq { stmts: body, idx: 0 });
                    }
                }
            }
        }
    }

    /// Reclaims memory the environment no longer determines, then records
    /// the live size for this iteration.
    fn iteration_end(&mut self) {
        let roots: BTreeSet<NodeId> = self
            .env
            .values()
            .copied()
            .filter(|id| self.state.node(*id).is_some())
            .collect();
        self.state.reclaim(&roots);
        self.drain_contaminations();
        self.touch();
        self.live_trace.push(self.state.live_count());
        let bound: BTreeSet<NodeId> = self.env.values().copied().collect();
        self.realized.retain(|id, _| bound.contains(id));
    }

    fn exec<C: Chooser>(
        &mut self,
        stmt: &'p Stmt,
        ctx: &Ctx<'p>,
        ch: &mut C,
    ) -> Result<bool, InferError> {
        match &stmt.kind {
            StmtKind::Sample { target, ann, dist } => {
                self.exec_sample(stmt, target, *ann, dist, ctx, ch)?;
                Ok(false)
            }
            StmtKind::Observe { subject, datum } => {
                self.exec_observe(stmt, subject, datum, ctx, ch)?;
                Ok(true)
            }
            StmtKind::If {
                cond,
                then_branch,
                else_branch,
            } => {
                let id = self.env[cond.as_str()];
                let (v, tainted) = self.resolve_value(id, ch)?;
                let branch: &'p [Stmt] = if v == 1.0 { then_branch } else { else_branch };
                if tainted {
                    self.taint_depth += 1;
                }
                self.frames.push(Frame::ExitBranch { tainted });
                self.frames.push(Frame::Seq {
                    stmts: branch,
                    idx: 0,
                });
                Ok(false)
            }
            StmtKind::For {
                index,
                lo,
                hi,
                body,
            } => {
                let l = self.int_value(lo, ctx);
                let h = self.int_value(hi, ctx);
                self.frames.push(Frame::Loop {
                    index: index.as_str(),
                    body,
                    next: l,
                    hi: h,
                    running: false,
                });
                Ok(false)
            }
        }
    }

    fn exec_sample<C: Chooser>(
        &mut self,
        stmt: &'p Stmt,
        target: &'p str,
        ann: Annotation,
        dist: &'p DistExpr,
        ctx: &Ctx<'p>,
        ch: &mut C,
    ) -> Result<(), InferError> {
        let origin = Origin {
            var: target.to_string(),
            stmt: stmt.id,
            line: stmt.line,
            iteration: self.idx.last().map(|&(_, v)| v),
        };
        match dist {
            DistExpr::Bernoulli { .. } => {
                let SiteShapes::Bernoulli { prob } = ctx.cp.info.sample_sites[&stmt.id].shapes
                else {
                    unreachable!("checked bernoulli site")
                };
                let id = self.state.assume(
                    origin,
                    ann,
                    SymDist::Bernoulli { p: prob },
                    self.ctx_tainted(),
                )?;
                self.env.insert(target, id);
                self.touch();
                // Approximation is not deferred: the draw happens at the
                // sample statement itself.
                if ann == Annotation::Approx {
                    self.resolve_value(id, ch)?;
                }
            }
            DistExpr::Gaussian { mean, variance } => {
                // Variance first: its dependencies are always forced, and the
                // draw order must not depend on how the mean evaluates.
                let (var_v, var_taint) = self.eval_to_value(variance, stmt.line, ctx, ch)?;
                if !(var_v.is_finite() && var_v > 0.0) {
                    return Err(InferError::BadVariance {
                        value: var_v,
                        line: stmt.line,
                    });
                }
                let (mut mean_aff, mut taint) = self.eval_expr(mean, stmt.line, ctx, ch)?;
                taint |= var_taint;
                if ctx.engine == EngineKind::Ds {
                    taint |= self.ds_restrict(&mut mean_aff, ch)?;
                }
                let id = self.state.assume(
                    origin,
                    ann,
                    SymDist::Gaussian {
                        mean: mean_aff,
                        var: var_v,
                    },
                    self.ctx_tainted() || taint,
                )?;
                self.env.insert(target, id);
                self.touch();
                if ann == Annotation::Approx {
                    self.resolve_value(id, ch)?;
                }
            }
        }
        self.drain_contaminations();
        self.touch();
        Ok(())
    }

    /// Chain restriction: keep at most the newest parent, and only if it is
    /// Gaussian. Everything else is sampled immediately.
    fn ds_restrict<C: Chooser>(
        &mut self,
        mean: &mut AffineExpr,
        ch: &mut C,
    ) -> Result<bool, InferError> {
        let mut taint = false;
        let refs: Vec<NodeId> = mean.refs().collect();
        if refs.len() >= 2 {
            for &r in &refs[..refs.len() - 1] {
                let (v, t) = self.resolve_value(r, ch)?;
                mean.collapse(r, v);
                taint |= t;
            }
        }
        let last = mean.refs().next();
        if let Some(r) = last {
            let bern = self
                .state
                .node(r)
                .is_some_and(|n| !n.dist.is_gaussian());
            if bern {
                let (v, t) = self.resolve_value(r, ch)?;
                mean.collapse(r, v);
                taint |= t;
            }
        }
        Ok(taint)
    }

    fn exec_observe<C: Chooser>(
        &mut self,
        stmt: &'p Stmt,
        subject: &'p str,
        datum: &'p DataRef,
        ctx: &Ctx<'p>,
        ch: &mut C,
    ) -> Result<(), InferError> {
        let d = self.datum(datum, stmt.line, ctx)?;
        let id = self.env[subject];
        if self.state.node(id).is_none() {
            return Err(InferError::ObserveRealized {
                var: subject.to_string(),
                line: stmt.line,
            });
        }
        if self.ctx_tainted() {
            self.state.mark_tainted(id);
        }
        if ctx.engine == EngineKind::Ds {
            let parents = self.state.parents_of(id);
            if parents.len() >= 2 {
                for &r in &parents[..parents.len() - 1] {
                    self.resolve_value(r, ch)?;
                }
            }
        }
        self.make_root(id, ch)?;
        self.logw += self.state.score(id, d)?;
        let tainted = self.state.node(id).expect("subject live").tainted;
        self.realized.insert(id, (d, tainted));
        self.state.realize(id, d)?;
        self.drain_contaminations();
        self.touch();
        Ok(())
    }

    /// Hoists the node, sampling any Bernoulli ancestor that blocks it.
    fn make_root<C: Chooser>(&mut self, id: NodeId, ch: &mut C) -> Result<(), InferError> {
        loop {
            match self.state.hoist(id)? {
                Hoisted::Ok => {
                    self.touch();
                    return Ok(());
                }
                Hoisted::Blocked { by } => {
                    self.resolve_value(by, ch)?;
                }
            }
        }
    }

    /// Concrete value of a bound node, sampling it if still symbolic.
    fn resolve_value<C: Chooser>(
        &mut self,
        id: NodeId,
        ch: &mut C,
    ) -> Result<(f64, bool), InferError> {
        if let Some(&(v, t)) = self.realized.get(&id) {
            return Ok((v, t));
        }
        self.make_root(id, ch)?;
        let node = self.state.node(id).expect("resolving live node");
        let ann = node.ann;
        let origin = node.origin.clone();
        if ann != Annotation::Approx {
            if ann == Annotation::Exact {
                self.violations.push(Violation {
                    var: origin.var.clone(),
                    line: origin.line,
                    iteration: origin.iteration,
                    kind: ViolationKind::Sampled,
                });
            }
            self.state.mark_tainted(id);
        }
        let v = match self.state.marginal(id)? {
            Marginal::Gaussian { mean, var } => ch.gaussian(mean, var.sqrt())?,
            Marginal::Bernoulli { p } => {
                let (v, dlw) = ch.bernoulli(p)?;
                self.logw += dlw;
                v
            }
        };
        self.sampled.insert(SampledVar {
            var: origin.var,
            stmt: origin.stmt,
            iteration: origin.iteration,
        });
        let tainted = self.state.node(id).expect("still live").tainted;
        self.realized.insert(id, (v, tainted));
        self.state.realize(id, v)?;
        self.drain_contaminations();
        self.touch();
        Ok((v, tainted))
    }

    fn int_value(&self, e: &IntExpr, ctx: &Ctx<'p>) -> i64 {
        match e {
            IntExpr::Lit(n) => *n,
            IntExpr::Name(name) => self
                .idx
                .iter()
                .rev()
                .find(|(n, _)| *n == name.as_str())
                .map(|&(_, v)| v)
                .or_else(|| ctx.cp.program.consts.get(name).copied())
                .expect("checked loop bound"),
        }
    }

    fn datum(&self, d: &DataRef, line: u32, ctx: &Ctx<'p>) -> Result<f64, InferError> {
        let index = self.int_value(&d.index, ctx);
        if !ctx.data.has_column(&d.param) {
            return Err(InferError::MissingData {
                param: d.param.clone(),
            });
        }
        ctx.data
            .get(&d.param, index)
            .ok_or_else(|| InferError::DataRange {
                param: d.param.clone(),
                index,
                line,
            })
    }

    /// Evaluates an expression to an affine form over live nodes. Returns
    /// whether any folded-in realized value was tainted.
    fn eval_expr<C: Chooser>(
        &mut self,
        e: &'p NumExpr,
        line: u32,
        ctx: &Ctx<'p>,
        ch: &mut C,
    ) -> Result<(AffineExpr, bool), InferError> {
        match e {
            NumExpr::Lit(v) => Ok((AffineExpr::konst(*v), false)),
            NumExpr::Var(name) => {
                if let Some(c) = ctx.cp.program.consts.get(name) {
                    return Ok((AffineExpr::konst(*c as f64), false));
                }
                if let Some(&(_, v)) = self.idx.iter().rev().find(|(n, _)| *n == name.as_str())
                {
                    return Ok((AffineExpr::konst(v as f64), false));
                }
                let id = self.env[name.as_str()];
                if self.state.node(id).is_some() {
                    Ok((AffineExpr::node(id), false))
                } else {
                    let (v, t) = self.realized[&id];
                    Ok((AffineExpr::konst(v), t))
                }
            }
            NumExpr::Datum(d) => Ok((AffineExpr::konst(self.datum(d, line, ctx)?), false)),
            NumExpr::Add(a, b) => {
                let (ea, ta) = self.eval_expr(a, line, ctx, ch)?;
                let (eb, tb) = self.eval_expr(b, line, ctx, ch)?;
                Ok((ea.plus(&eb), ta || tb))
            }
            NumExpr::Sub(a, b) => {
                let (ea, ta) = self.eval_expr(a, line, ctx, ch)?;
                let (eb, tb) = self.eval_expr(b, line, ctx, ch)?;
                Ok((ea.minus(&eb), ta || tb))
            }
            NumExpr::Mul(a, b) => {
                let (mut ea, mut ta) = self.eval_expr(a, line, ctx, ch)?;
                let (mut eb, tb) = self.eval_expr(b, line, ctx, ch)?;
                ta |= tb;
                if ea.is_const() {
                    return Ok((eb.scaled(ea.intercept), ta));
                }
                if eb.is_const() {
                    return Ok((ea.scaled(eb.intercept), ta));
                }
                // A product of two random quantities has no affine form:
                // every reference is sampled and the product becomes a
                // constant.
                for side in [&mut ea, &mut eb] {
                    let refs: Vec<NodeId> = side.refs().collect();
                    for r in refs {
                        let (v, t) = self.resolve_value(r, ch)?;
                        side.collapse(r, v);
                        ta |= t;
                    }
                }
                Ok((
                    AffineExpr::konst(ea.intercept * eb.intercept),
                    ta,
                ))
            }
        }
    }

    /// Evaluates to a concrete number, sampling any remaining references.
    fn eval_to_value<C: Chooser>(
        &mut self,
        e: &'p NumExpr,
        line: u32,
        ctx: &Ctx<'p>,
        ch: &mut C,
    ) -> Result<(f64, bool), InferError> {
        let (mut aff, mut taint) = self.eval_expr(e, line, ctx, ch)?;
        let refs: Vec<NodeId> = aff.refs().collect();
        for r in refs {
            let (v, t) = self.resolve_value(r, ch)?;
            aff.collapse(r, v);
            taint |= t;
        }
        Ok((aff.intercept, taint))
    }

    /// Closed-form component for the program result, sampling only if a
    /// Bernoulli blocks the hoist.
    fn extract<C: Chooser>(
        &mut self,
        ctx: &Ctx<'p>,
        ch: &mut C,
    ) -> Result<Component, InferError> {
        let id = self.env[ctx.cp.program.result.as_str()];
        if let Some(&(v, _)) = self.realized.get(&id) {
            return Ok(Component::Value { value: v });
        }
        self.make_root(id, ch)?;
        let c = match self.state.marginal(id)? {
            Marginal::Gaussian { mean, var } => Component::Gaussian { mean, var },
            Marginal::Bernoulli { p } => Component::Bernoulli { p },
        };
        self.touch();
        Ok(c)
    }
}

fn advance<'p, C: Chooser>(
    particles: &mut [Particle<'p>],
    choosers: &mut [C],
    ctx: &Ctx<'p>,
    parallel: bool,
) -> Result<Vec<Park>, InferError> {
    let results: Vec<Result<Park, InferError>>;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if parallel && particles.len() > 1 {
            results = particles
                .par_iter_mut()
                .zip(choosers.par_iter_mut())
                .map(|(p, c)| p.run_segment(ctx, c))
                .collect();
        } else {
            results = particles
                .iter_mut()
                .zip(choosers.iter_mut())
                .map(|(p, c)| p.run_segment(ctx, c))
                .collect();
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = parallel;
        results = particles
            .iter_mut()
            .zip(choosers.iter_mut())
            .map(|(p, c)| p.run_segment(ctx, c))
            .collect();
    }
    results.into_iter().collect()
}

/// Runs sampling inference and returns the posterior for the program result
/// plus run diagnostics. Output is a deterministic function of the program,
/// data, and configuration; parallelism does not change it.
pub fn run(
    cp: &CheckedProgram,
    data: &DataTable,
    cfg: &RunConfig,
) -> Result<RunResult, InferError> {
    let k = cfg.particles.max(1);
    let ctx = Ctx {
        cp,
        data,
        engine: cfg.engine,
    };
    let mut particles: Vec<Particle> = (0..k).map(|_| Particle::new(cp)).collect();
    let mut choosers: Vec<RngChooser> = (0..k)
        .map(|slot| RngChooser::new(cfg.seed, slot as u64))
        .collect();
    let mut resample_rng = SlotRng::new(cfg.seed, u64::MAX);
    let mut log_evidence = 0.0;

    loop {
        let parks = advance(&mut particles, &mut choosers, &ctx, cfg.parallel)?;
        debug_assert!(parks.iter().all(|p| *p == parks[0]), "particles in step");
        if parks[0] == Park::Done {
            break;
        }
        let logws: Vec<f64> = particles.iter().map(|p| p.logw).collect();
        if logws.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(InferError::AllParticlesDead);
        }
        if k > 1 {
            let (norm, lse) = normalize_log_weights(&logws);
            let ess = 1.0 / norm.iter().map(|w| w * w).sum::<f64>();
            if ess < cfg.resample_threshold * k as f64 {
                log_evidence += lse - (k as f64).ln();
                let ancestors = systematic(&norm, resample_rng.uniform());
                particles = ancestors
                    .iter()
                    .map(|&a| {
                        let mut p = particles[a].clone();
                        p.logw = 0.0;
                        p
                    })
                    .collect();
            }
        }
    }

    let logws: Vec<f64> = particles.iter().map(|p| p.logw).collect();
    let lse = logsumexp(&logws);
    if lse == f64::NEG_INFINITY {
        return Err(InferError::AllParticlesDead);
    }
    log_evidence += lse - (k as f64).ln();

    let mut outcomes = Vec::with_capacity(k);
    for (p, c) in particles.iter_mut().zip(choosers.iter_mut()) {
        let component = p.extract(&ctx, c)?;
        outcomes.push(((p.logw - lse).exp(), component));
    }
    let posterior = Posterior::from_weighted(&outcomes);

    let mut sampled: BTreeSet<SampledVar> = BTreeSet::new();
    let mut violations: Vec<Violation> = Vec::new();
    let mut live_trace: Vec<usize> = Vec::new();
    let mut peak_live = 0;
    for p in &particles {
        sampled.extend(p.sampled.iter().cloned());
        violations.extend(p.violations.iter().cloned());
        for (i, &v) in p.live_trace.iter().enumerate() {
            if i < live_trace.len() {
                live_trace[i] = live_trace[i].max(v);
            } else {
                live_trace.push(v);
            }
        }
        peak_live = peak_live.max(p.peak_live);
    }
    violations.sort_by_key(|v| v.key());
    violations.dedup();

    Ok(RunResult {
        posterior,
        log_evidence,
        diagnostics: Diagnostics {
            sampled_vars: sampled.into_iter().collect(),
            peak_live,
            live_trace,
            violations,
        },
    })
}

/// Exact posterior by enumerating every Bernoulli assignment. Programs that
/// would force a Gaussian draw are not enumerable; the choice count is
/// capped.
pub fn enumerate(
    cp: &CheckedProgram,
    data: &DataTable,
    max_choices: usize,
) -> Result<OracleResult, InferError> {
    let ctx = Ctx {
        cp,
        data,
        engine: EngineKind::Ssi,
    };
    let mut worklist: Vec<Vec<bool>> = vec![Vec::new()];
    let mut outcomes: Vec<(f64, Component)> = Vec::new();
    let mut log_weights: Vec<f64> = Vec::new();
    while let Some(prefix) = worklist.pop() {
        let mut particle = Particle::new(cp);
        let mut chooser = ScriptChooser {
            script: &prefix,
            pos: 0,
        };
        let run_out = (|| -> Result<Component, InferError> {
            loop {
                match particle.run_segment(&ctx, &mut chooser)? {
                    Park::Observed => continue,
                    Park::Done => break,
                }
            }
            particle.extract(&ctx, &mut chooser)
        })();
        match run_out {
            Ok(component) => {
                log_weights.push(particle.logw);
                outcomes.push((particle.logw, component));
            }
            Err(InferError::ScriptExhausted) => {
                if prefix.len() >= max_choices {
                    return Err(InferError::TooManyDiscrete { max: max_choices });
                }
                let mut hi = prefix.clone();
                hi.push(true);
                let mut lo = prefix;
                lo.push(false);
                worklist.push(hi);
                worklist.push(lo);
            }
            Err(e) => return Err(e),
        }
    }
    let lse = logsumexp(&log_weights);
    if lse == f64::NEG_INFINITY {
        return Err(InferError::AllParticlesDead);
    }
    let weighted: Vec<(f64, Component)> = outcomes
        .into_iter()
        .map(|(lw, c)| ((lw - lse).exp(), c))
        .collect();
    Ok(OracleResult {
        posterior: Posterior::from_weighted(&weighted),
        log_evidence: lse,
        assignments: weighted.len(),
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OracleResult {
    pub posterior: Posterior,
    pub log_evidence: f64,
    /// Number of completed Bernoulli assignments.
    pub assignments: usize,
}

struct ScriptChooser<'s> {
    script: &'s [bool],
    pos: usize,
}

impl Chooser for ScriptChooser<'_> {
    fn gaussian(&mut self, _mean: f64, _sd: f64) -> Result<f64, InferError> {
        Err(InferError::NonEnumerable)
    }

    fn bernoulli(&mut self, p: f64) -> Result<(f64, f64), InferError> {
        let Some(&choice) = self.script.get(self.pos) else {
            return Err(InferError::ScriptExhausted);
        };
        self.pos += 1;
        if choice {
            Ok((1.0, p.ln()))
        } else {
            Ok((0.0, (1.0 - p).ln()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::load;
    use crate::runtime::results::ViolationKind;

    fn checked(src: &str) -> CheckedProgram {
        load(src, &BTreeMap::new()).expect("test program loads")
    }

    fn table(name: &str, values: &[f64]) -> DataTable {
        let mut t = DataTable::default();
        t.insert(name, values.to_vec());
        t
    }

    fn cfg(particles: usize, seed: u64) -> RunConfig {
        RunConfig {
            particles,
            seed,
            ..RunConfig::default()
        }
    }

    #[test]
    fn conjugate_chain_posterior_is_exact() {
        let cp = checked(
            "function post(d) {\n  x <- gaussian(0., 100.);\n  y <- gaussian(x, 1.);\n  observe(y, d[1]);\n  x\n}\n",
        );
        let data = table("d", &[2.0]);
        let out = run(&cp, &data, &cfg(64, 7)).unwrap();
        assert_eq!(out.posterior.components.len(), 1);
        let Component::Gaussian { mean, var } = out.posterior.components[0].component else {
            panic!("symbolic result expected");
        };
        assert!((mean - 200.0 / 101.0).abs() < 1e-12);
        assert!((var - 100.0 / 101.0).abs() < 1e-12);
        assert!(out.diagnostics.sampled_vars.is_empty());
        assert!(out.diagnostics.violations.is_empty());
        let expected_ev =
            -0.5 * (std::f64::consts::TAU * 101.0).ln() - (2.0 * 2.0) / (2.0 * 101.0);
        assert!((out.log_evidence - expected_ev).abs() < 1e-12);
    }

    #[test]
    fn kalman_chain_matches_filter_recursion() {
        let src = "const N = 8;\nfunction kalman(yobs) {\n  x <- exact gaussian(0., 100.);\n  for i in 1 .. N {\n    x <- exact gaussian(x, 1.);\n    y <- gaussian(x, 1.);\n    observe(y, yobs[i]);\n  };\n  x\n}\n";
        let cp = checked(src);
        let ys = [0.4, -0.3, 1.9, 2.2, 1.1, 0.0, -0.7, 0.5];
        let data = table("yobs", &ys);
        let out = run(&cp, &data, &cfg(16, 3)).unwrap();

        let (mut m, mut v) = (0.0_f64, 100.0_f64);
        for &y in &ys {
            let pv = v + 1.0;
            let k = pv / (pv + 1.0);
            m += k * (y - m);
            v = pv * (1.0 - k);
        }
        assert_eq!(out.posterior.components.len(), 1);
        let Component::Gaussian { mean, var } = out.posterior.components[0].component else {
            panic!("symbolic result expected");
        };
        assert!((mean - m).abs() < 1e-9, "mean {mean} vs {m}");
        assert!((var - v).abs() < 1e-9, "var {var} vs {v}");
        assert!(out.diagnostics.sampled_vars.is_empty());
        assert!(out.diagnostics.live_trace.iter().all(|&n| n <= 1));
        assert!(out.diagnostics.peak_live <= 3);
    }

    const OUTLIER_N1: &str = "const N = 1;\nfunction outlier(yobs) {\n  x <- gaussian(0., 100.);\n  for i in 1 .. N {\n    x <- exact gaussian(x, 1.);\n    o <- approx bernoulli(0.1);\n    if (o) { y <- gaussian(0., 100.); }\n    else { y <- gaussian(x, 1.); }\n    observe(y, yobs[i]);\n  };\n  x\n}\n";

    #[test]
    fn enumeration_matches_two_case_closed_form() {
        let cp = checked(OUTLIER_N1);
        let data = table("yobs", &[0.0]);
        let out = enumerate(&cp, &data, 20).unwrap();
        assert_eq!(out.assignments, 2);

        let phi = |x: f64, var: f64| (-x * x / (2.0 * var)).exp()
            / (std::f64::consts::TAU * var).sqrt();
        let w_out = 0.1 * phi(0.0, 100.0);
        let w_in = 0.9 * phi(0.0, 102.0);
        assert!((out.log_evidence - (w_out + w_in).ln()).abs() < 1e-12);
        assert!(out.posterior.mean.abs() < 1e-12);

        assert_eq!(out.posterior.components.len(), 2);
        let Component::Gaussian { mean, var } = out.posterior.components[0].component else {
            panic!("gaussian mixture expected");
        };
        assert!(mean.abs() < 1e-12);
        assert!((var - 101.0 / 102.0).abs() < 1e-12);
        let w0 = out.posterior.components[0].weight;
        assert!((w0 - w_in / (w_in + w_out)).abs() < 1e-12);
    }

    #[test]
    fn particles_converge_to_enumeration() {
        let cp = checked(OUTLIER_N1);
        let data = table("yobs", &[2.0]);
        let oracle = enumerate(&cp, &data, 20).unwrap();
        let out = run(&cp, &data, &cfg(20000, 11)).unwrap();
        assert!(
            (out.posterior.mean - oracle.posterior.mean).abs() < 0.06,
            "smc {} oracle {}",
            out.posterior.mean,
            oracle.posterior.mean
        );
        assert!((out.log_evidence - oracle.log_evidence).abs() < 0.05);
        let sampled: Vec<&str> = out
            .diagnostics
            .sampled_vars
            .iter()
            .map(|s| s.var.as_str())
            .collect();
        assert!(sampled.iter().all(|v| *v == "o"), "sampled {sampled:?}");
        assert!(!sampled.is_empty());
        assert_eq!(
            out.diagnostics.sampled_vars[0].iteration,
            Some(1),
            "loop iteration recorded"
        );
        assert!(out.diagnostics.violations.is_empty());
    }

    #[test]
    fn ds_samples_a_gaussian_where_ssi_keeps_it() {
        let src = "function twin(d) {\n  x <- gaussian(0., 1.);\n  y <- gaussian(0., 1.);\n  z <- gaussian(x + y, 1.);\n  observe(z, d[1]);\n  x\n}\n";
        let cp = checked(src);
        let data = table("d", &[0.5]);
        let ssi = run(&cp, &data, &cfg(8, 5)).unwrap();
        assert!(ssi.diagnostics.sampled_vars.is_empty());

        let mut ds_cfg = cfg(8, 5);
        ds_cfg.engine = EngineKind::Ds;
        let ds = run(&cp, &data, &ds_cfg).unwrap();
        let sampled: Vec<&str> = ds
            .diagnostics
            .sampled_vars
            .iter()
            .map(|s| s.var.as_str())
            .collect();
        assert_eq!(sampled, vec!["x"]);
    }

    #[test]
    fn unsanctioned_branch_contaminates_exact_ancestor() {
        let src = "function bad(d) {\n  x <- exact gaussian(0., 100.);\n  o <- bernoulli(0.);\n  if (o) { y <- gaussian(0., 100.); }\n  else { y <- gaussian(x, 1.); }\n  observe(y, d[1]);\n  x\n}\n";
        let cp = checked(src);
        let data = table("d", &[1.0]);
        let out = run(&cp, &data, &cfg(4, 2)).unwrap();
        assert!(!out.diagnostics.violations.is_empty());
        let v = &out.diagnostics.violations[0];
        assert_eq!(v.var, "x");
        assert_eq!(v.kind, ViolationKind::Contaminated);
        assert_eq!(
            out.exact_violation_report().unwrap(),
            format!("ExactViolation: x at line {}", v.line)
        );
        let sampled: Vec<&str> = out
            .diagnostics
            .sampled_vars
            .iter()
            .map(|s| s.var.as_str())
            .collect();
        assert_eq!(sampled, vec!["o"]);
    }

    #[test]
    fn sampling_an_exact_node_is_reported_directly() {
        let src = "function gate(d) {\n  o <- exact bernoulli(0.5);\n  if (o) { y <- gaussian(1., 1.); }\n  else { y <- gaussian(0., 1.); }\n  observe(y, d[1]);\n  y\n}\n";
        let cp = checked(src);
        let out = run(&cp, &table("d", &[0.3]), &cfg(6, 9)).unwrap();
        assert!(out
            .diagnostics
            .violations
            .iter()
            .any(|v| v.var == "o" && v.kind == ViolationKind::Sampled));
    }

    #[test]
    fn bounded_loop_reclaims_while_walk_accumulates() {
        let outlier = checked(
            "const N = 6;\nfunction outlier(yobs) {\n  x <- gaussian(0., 100.);\n  for i in 1 .. N {\n    x <- exact gaussian(x, 1.);\n    o <- approx bernoulli(0.1);\n    if (o) { y <- gaussian(0., 100.); }\n    else { y <- gaussian(x, 1.); }\n    observe(y, yobs[i]);\n  };\n  x\n}\n",
        );
        let data = table("yobs", &[0.1, -0.2, 0.3, 8.0, 0.2, 0.0]);
        let out = run(&outlier, &data, &cfg(32, 4)).unwrap();
        assert_eq!(out.diagnostics.live_trace, vec![1; 6]);
        assert!(out.diagnostics.peak_live <= 3);

        let walk = checked(
            "const N = 6;\nfunction drift(d) {\n  x0 <- gaussian(0., 1.);\n  x <- gaussian(x0, 1.);\n  for i in 1 .. N {\n    x <- gaussian(x, 1.);\n  };\n  observe(x0, d[1]);\n  x\n}\n",
        );
        let wout = run(&walk, &table("d", &[0.4]), &cfg(4, 4)).unwrap();
        assert_eq!(wout.diagnostics.live_trace, vec![3, 4, 5, 6, 7, 8]);
        assert_eq!(wout.diagnostics.peak_live, 8);
        assert!(wout.diagnostics.sampled_vars.is_empty());
    }

    #[test]
    fn observing_a_realized_variable_errors() {
        let cp = checked(
            "function f(d) {\n  a <- approx gaussian(0., 1.);\n  observe(a, d[1]);\n  a\n}\n",
        );
        let err = run(&cp, &table("d", &[0.0]), &cfg(2, 1)).unwrap_err();
        assert!(matches!(err, InferError::ObserveRealized { ref var, line: 3 } if var == "a"));
    }

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let cp = checked(OUTLIER_N1);
        let data = table("yobs", &[1.5]);
        let mut serial = cfg(512, 42);
        serial.parallel = false;
        let a = run(&cp, &data, &serial).unwrap();
        let b = run(&cp, &data, &cfg(512, 42)).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn enumeration_caps_discrete_choices() {
        let src = "const N = 4;\nfunction many(d) {\n  x <- gaussian(0., 1.);\n  for i in 1 .. N {\n    o <- approx bernoulli(0.5);\n  };\n  observe(x, d[1]);\n  x\n}\n";
        let cp = checked(src);
        let err = enumerate(&cp, &table("d", &[0.0]), 3).unwrap_err();
        assert!(matches!(err, InferError::TooManyDiscrete { max: 3 }));
        let ok = enumerate(&cp, &table("d", &[0.0]), 4).unwrap();
        assert_eq!(ok.assignments, 16);
    }

    #[test]
    fn enumeration_rejects_forced_gaussians() {
        let cp = checked(
            "function f(d) {\n  a <- approx gaussian(0., 1.);\n  b <- gaussian(a, 1.);\n  observe(b, d[1]);\n  b\n}\n",
        );
        let err = enumerate(&cp, &table("d", &[0.0]), 20).unwrap_err();
        assert!(matches!(err, InferError::NonEnumerable));
    }

    #[test]
    fn nonaffine_mean_samples_both_factors() {
        let cp = checked(
            "function prod(d) {\n  a <- gaussian(1., 1.);\n  b <- gaussian(2., 1.);\n  c <- gaussian(a * b, 1.);\n  observe(c, d[1]);\n  a\n}\n",
        );
        let out = run(&cp, &table("d", &[2.0]), &cfg(16, 6)).unwrap();
        let sampled: BTreeSet<&str> = out
            .diagnostics
            .sampled_vars
            .iter()
            .map(|s| s.var.as_str())
            .collect();
        assert_eq!(sampled, BTreeSet::from(["a", "b"]));
        assert!(out
            .posterior
            .components
            .iter()
            .all(|c| matches!(c.component, Component::Value { .. })));
    }

    #[test]
    fn bernoulli_ancestor_blocks_observe_and_is_sampled() {
        let cp = checked(
            "function gate(d) {\n  o <- bernoulli(0.5);\n  y <- gaussian(o, 1.);\n  observe(y, d[1]);\n  o\n}\n",
        );
        let out = run(&cp, &table("d", &[0.9]), &cfg(4000, 13)).unwrap();
        let sampled: Vec<&str> = out
            .diagnostics
            .sampled_vars
            .iter()
            .map(|s| s.var.as_str())
            .collect();
        assert_eq!(sampled, vec!["o"]);
        // p(o=1 | y=0.9) = 0.5 phi(0.9;1,1) / (0.5 phi(0.9;0,1) + 0.5 phi(0.9;1,1))
        let phi = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp();
        let post = phi(0.9, 1.0) / (phi(0.9, 0.0) + phi(0.9, 1.0));
        assert!((out.posterior.mean - post).abs() < 0.05);
    }

    #[test]
    fn program_without_observation_has_zero_evidence() {
        let cp = checked("function f(d) {\n  x <- gaussian(3., 2.);\n  x\n}\n");
        let out = run(&cp, &DataTable::default(), &cfg(10, 1)).unwrap();
        assert_eq!(out.log_evidence, 0.0);
        assert_eq!(out.posterior.components.len(), 1);
        assert!((out.posterior.mean - 3.0).abs() < 1e-12);
        assert!((out.posterior.var - 2.0).abs() < 1e-12);
    }
}
