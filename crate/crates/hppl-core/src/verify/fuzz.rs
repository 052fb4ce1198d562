//! Differential soundness testing. Random programs, valid by construction,
//! go through the division analyzer and then through the sampling runtime;
//! any Verified annotation that a run nevertheless samples or contaminates
//! is reported with the offending source.

use crate::lang::load;
use crate::lang::validate::CheckedProgram;
use crate::runtime::rng::SlotRng;
use crate::runtime::{run, DataTable, EngineKind, RunConfig};
use crate::verify::{analyze_division, SiteVerdict};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy)]
pub struct FuzzConfig {
    pub programs: usize,
    pub seeds_per_program: u64,
    pub particles: usize,
    pub gen_seed: u64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            programs: 500,
            seeds_per_program: 20,
            particles: 16,
            gen_seed: 0,
        }
    }
}

#[derive(Debug, Default)]
pub struct FuzzReport {
    pub programs: usize,
    pub runs: usize,
    pub exact_sites: usize,
    pub verified_sites: usize,
    pub refuted_sites: usize,
    pub unknown_sites: usize,
    /// One entry per program whose certificate a run broke.
    pub failures: Vec<String>,
}

impl FuzzReport {
    pub fn sound(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "{} programs, {} runs, {} exact sites ({} verified, {} refuted, {} unknown), {} failures",
            self.programs,
            self.runs,
            self.exact_sites,
            self.verified_sites,
            self.refuted_sites,
            self.unknown_sites,
            self.failures.len()
        )
    }
}

/// Fixed synthetic observations; values only steer weights, never validity.
fn fuzz_data() -> DataTable {
    let mut t = DataTable::new();
    let rows: Vec<f64> = (1..=40)
        .map(|j| (j as f64 * 0.7).sin() * 1.5 + 0.2)
        .collect();
    t.insert("d", rows);
    t
}

struct Gen {
    rng: SlotRng,
    lines: Vec<String>,
    fresh: u32,
    obs_idx: u32,
    /// Gaussian-kind names referencable at toplevel.
    gauss: Vec<String>,
    /// Bernoulli-kind names referencable at toplevel.
    berns: Vec<String>,
    /// Names whose node is already realized; observing them would fault.
    consumed: BTreeSet<String>,
    /// Names already conditioned on some path; a second observation of the
    /// same static name is rejected unless a toplevel rebinding intervenes.
    observed: BTreeSet<String>,
    /// Unrealized Bernoulli ancestors reachable through each Gaussian mean.
    banc: BTreeMap<String, BTreeSet<String>>,
}

impl Gen {
    fn new(rng: SlotRng) -> Self {
        Gen {
            rng,
            lines: Vec::new(),
            fresh: 0,
            obs_idx: 10,
            gauss: Vec::new(),
            berns: Vec::new(),
            consumed: BTreeSet::new(),
            observed: BTreeSet::new(),
            banc: BTreeMap::new(),
        }
    }

    fn pct(&mut self, p: f64) -> bool {
        self.rng.uniform() < p
    }

    fn upto(&mut self, n: usize) -> usize {
        (self.rng.uniform() * n as f64) as usize % n.max(1)
    }

    fn pick(&mut self, v: &[String]) -> String {
        v[self.upto(v.len())].clone()
    }

    fn lit(&mut self, lo: f64, hi: f64) -> String {
        let x = lo + self.rng.uniform() * (hi - lo);
        format!("{:.2}", x)
    }

    fn ann(&mut self, p_approx: f64, p_exact: f64) -> &'static str {
        let u = self.rng.uniform();
        if u < p_approx {
            "approx "
        } else if u < p_approx + p_exact {
            "exact "
        } else {
            ""
        }
    }

    fn fresh_name(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{}{}", prefix, self.fresh)
    }

    /// Unrealized Bernoulli names a draw or observation of `refs` would force.
    fn live_blockers(&self, refs: &[String]) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for r in refs {
            if self.berns.contains(r) && !self.consumed.contains(r) {
                out.insert(r.clone());
            }
            if let Some(anc) = self.banc.get(r) {
                out.extend(anc.iter().filter(|b| !self.consumed.contains(*b)).cloned());
            }
        }
        out
    }

    /// Affine or (rarely) multiplicative mean over in-scope names. Returns
    /// the expression, the names it references, and whether a product of
    /// two variables forces them at evaluation time.
    fn mean(&mut self, locals: &[String]) -> (String, Vec<String>, bool) {
        let mut pool: Vec<String> = self.gauss.iter().cloned().collect();
        pool.extend(locals.iter().cloned());
        if self.pct(0.25) {
            pool.extend(self.berns.iter().cloned());
        }
        if pool.len() >= 2 && self.pct(0.06) {
            let a = self.pick(&pool);
            let b = self.pick(&pool);
            if a != b {
                return (format!("{a} * {b}"), vec![a, b], true);
            }
        }
        let terms = if pool.is_empty() { 0 } else { self.upto(3) };
        let mut expr = self.lit(-2.0, 2.0);
        let mut refs = Vec::new();
        for _ in 0..terms {
            let v = self.pick(&pool);
            let c = self.lit(0.2, 1.5);
            expr = format!("{expr} + {c} * {v}");
            refs.push(v);
        }
        (expr, refs, false)
    }

    fn sample_gaussian(&mut self, indent: &str, locals: &mut Vec<String>, in_branch: bool) {
        let (mean, refs, forces) = self.mean(locals);
        let var = self.lit(0.3, 3.0);
        let rebind = !in_branch && !self.gauss.is_empty() && self.pct(0.25);
        let name = if rebind {
            let g = self.gauss.clone();
            self.pick(&g)
        } else {
            self.fresh_name("g")
        };
        let ann = if in_branch {
            self.ann(0.0, 0.10)
        } else {
            self.ann(0.25, 0.15)
        };
        self.lines
            .push(format!("{indent}{name} <- {ann}gaussian({mean}, {var});"));
        if forces {
            // Product means force every referenced value immediately.
            for r in &refs {
                let anc = self.live_blockers(std::slice::from_ref(r));
                self.consumed.extend(anc);
                self.consumed.insert(r.clone());
            }
        }
        let mut anc = BTreeSet::new();
        if !forces {
            anc = self.live_blockers(&refs);
        }
        self.consumed.remove(&name);
        if !in_branch {
            self.observed.remove(&name);
        }
        if ann == "approx " {
            // Drawn on the spot, taking unrealized discrete ancestors along.
            self.consumed.extend(anc.iter().cloned());
            self.consumed.insert(name.clone());
            anc.clear();
        }
        self.banc.insert(name.clone(), anc);
        if in_branch {
            if !locals.contains(&name) {
                locals.push(name);
            }
        } else if !rebind {
            self.gauss.push(name);
        }
    }

    fn sample_bern(&mut self, indent: &str) {
        let name = self.fresh_name("o");
        let p = self.lit(0.1, 0.9);
        let ann = self.ann(0.20, 0.10);
        self.lines
            .push(format!("{indent}{name} <- {ann}bernoulli({p});"));
        if ann == "approx " {
            self.consumed.insert(name.clone());
        }
        self.berns.push(name);
    }

    fn observe(&mut self, indent: &str, subject: &str, index: &str) {
        self.lines
            .push(format!("{indent}observe({subject}, d[{index}]);"));
        let blockers = self.live_blockers(std::slice::from_ref(&subject.to_string()));
        self.consumed.extend(blockers);
        self.consumed.insert(subject.to_string());
        self.observed.insert(subject.to_string());
        self.banc.insert(subject.to_string(), BTreeSet::new());
    }

    fn observable(&self, candidates: &[String]) -> Vec<String> {
        candidates
            .iter()
            .filter(|g| !self.consumed.contains(*g) && !self.observed.contains(*g))
            .cloned()
            .collect()
    }

    fn if_stmt(&mut self, indent: &str, body_locals: Option<&mut Vec<String>>) {
        if self.berns.is_empty() {
            return;
        }
        let b = self.berns.clone();
        let cond = self.pick(&b);
        let shared = self.fresh_name("g");
        let mut branches = Vec::new();
        for _ in 0..2 {
            let (mean, refs, forces) = self.mean(&[]);
            let var = self.lit(0.3, 3.0);
            let ann = self.ann(0.0, 0.10);
            branches.push(format!("{shared} <- {ann}gaussian({mean}, {var});"));
            if forces {
                // Paths through this branch realize the factors, so they can
                // never be observed afterwards.
                for r in &refs {
                    let anc = self.live_blockers(std::slice::from_ref(r));
                    self.consumed.extend(anc);
                    self.consumed.insert(r.clone());
                }
            } else {
                let anc = self.live_blockers(&refs);
                self.banc
                    .entry(shared.clone())
                    .or_default()
                    .extend(anc.iter().cloned());
            }
        }
        self.lines.push(format!(
            "{indent}if ({cond}) {{ {} }}",
            branches[0]
        ));
        self.lines
            .push(format!("{indent}else {{ {} }}", branches[1]));
        // Branching realizes the guard.
        self.consumed.insert(cond);
        match body_locals {
            Some(locals) => locals.push(shared),
            None => self.gauss.push(shared),
        }
    }

    fn for_stmt(&mut self, indent: &str) {
        let k = 2 + self.upto(3);
        let inner = format!("{indent}  ");
        self.lines.push(format!("{indent}for i in 1 .. {k} {{"));
        let mut locals: Vec<String> = Vec::new();
        let berns_before = self.berns.len();
        if !self.gauss.is_empty() && self.pct(0.6) {
            // Loop-carried rebinding keeps the chain alive across iterations.
            let g = self.gauss.clone();
            let x = self.pick(&g);
            let c = self.lit(0.3, 1.1);
            let b = self.lit(-0.5, 0.5);
            let v = self.lit(0.3, 2.0);
            self.lines
                .push(format!("{inner}{x} <- gaussian({b} + {c} * {x}, {v});"));
            self.consumed.remove(&x);
        }
        if self.pct(0.3) {
            self.sample_bern(&inner);
        }
        if self.pct(0.25) {
            self.if_stmt(&inner, Some(&mut locals));
        }
        self.sample_gaussian(&inner, &mut locals, true);
        if self.pct(0.8) {
            let obs = self.observable(&locals);
            if !obs.is_empty() {
                let subject = self.pick(&obs);
                self.observe(&inner, &subject, "i");
            }
        }
        self.lines.push(format!("{indent}}};"));
        // Body bindings fall out of scope; realized outer names stay realized.
        self.berns.truncate(berns_before);
    }

    fn program(mut self) -> String {
        self.lines.push("function fuzz(d) {".to_string());
        let indent = "  ".to_string();
        self.sample_gaussian(&indent, &mut Vec::new(), false);
        let stmts = 3 + self.upto(6);
        let mut used_loop = false;
        for _ in 0..stmts {
            let roll = self.rng.uniform();
            if roll < 0.18 {
                self.sample_bern(&indent);
            } else if roll < 0.34 && !self.berns.is_empty() {
                self.if_stmt(&indent, None);
            } else if roll < 0.52 && !used_loop {
                self.for_stmt(&indent);
                used_loop = true;
            } else if roll < 0.75 {
                self.sample_gaussian(&indent, &mut Vec::new(), false);
            } else {
                let obs = self.observable(&self.gauss.clone());
                if !obs.is_empty() {
                    let subject = self.pick(&obs);
                    self.obs_idx += 1;
                    let idx = self.obs_idx.to_string();
                    self.observe(&indent, &subject, &idx);
                } else {
                    self.sample_gaussian(&indent, &mut Vec::new(), false);
                }
            }
        }
        let result = self.pick(&self.gauss.clone());
        self.lines.push(format!("  {result}"));
        self.lines.push("}".to_string());
        self.lines.join("\n") + "\n"
    }
}

fn check_program(
    cp: &CheckedProgram,
    src: &str,
    data: &DataTable,
    cfg: &FuzzConfig,
    report: &mut FuzzReport,
) {
    let division = analyze_division(cp);
    let mut verified: Vec<(crate::lang::ast::StmtId, String, u32)> = Vec::new();
    for site in &division.sites {
        report.exact_sites += 1;
        match site.verdict {
            SiteVerdict::Verified => {
                report.verified_sites += 1;
                verified.push((site.site, site.var.clone(), site.line));
            }
            SiteVerdict::Refuted { .. } => report.refuted_sites += 1,
            SiteVerdict::Unknown => report.unknown_sites += 1,
        }
    }
    for seed in 0..cfg.seeds_per_program {
        let rc = RunConfig {
            engine: EngineKind::Ssi,
            particles: cfg.particles,
            seed,
            resample_threshold: 0.5,
            parallel: false,
        };
        report.runs += 1;
        match run(cp, data, &rc) {
            Ok(out) => {
                for sv in &out.diagnostics.sampled_vars {
                    if verified.iter().any(|(id, _, _)| *id == sv.stmt) {
                        report.failures.push(format!(
                            "verified `{}` was sampled (seed {seed})\n{src}",
                            sv.var
                        ));
                        return;
                    }
                }
                for v in &out.diagnostics.violations {
                    if verified
                        .iter()
                        .any(|(_, var, line)| var == &v.var && *line == v.line)
                    {
                        report.failures.push(format!(
                            "verified `{}` was violated at line {} (seed {seed})\n{src}",
                            v.var, v.line
                        ));
                        return;
                    }
                }
            }
            Err(e) => {
                report.failures.push(format!("run failed ({e}, seed {seed})\n{src}"));
                return;
            }
        }
    }
}

/// Generates `cfg.programs` random programs and replays each under
/// `cfg.seeds_per_program` seeds, checking every Verified annotation
/// against what the runtime actually sampled.
pub fn run_fuzz(cfg: &FuzzConfig) -> FuzzReport {
    let mut report = FuzzReport::default();
    let data = fuzz_data();
    for p in 0..cfg.programs {
        let gen = Gen::new(SlotRng::new(cfg.gen_seed, p as u64));
        let src = gen.program();
        report.programs += 1;
        match load(&src, &BTreeMap::new()) {
            Ok(cp) => check_program(&cp, &src, &data, cfg, &mut report),
            Err(e) => report
                .failures
                .push(format!("generator produced an invalid program ({e})\n{src}")),
        }
    }
    report
}
