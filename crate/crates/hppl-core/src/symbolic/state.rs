//! A Bayesian network over scalar variables where every Gaussian mean is
//! affine in its parents. Conjugate swaps re-root the network so any node can
//! be brought to a closed-form marginal without sampling, provided no
//! Bernoulli blocks the path.

use super::affine::AffineExpr;
use crate::lang::ast::{Annotation, StmtId};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymDist {
    Gaussian { mean: AffineExpr, var: f64 },
    Bernoulli { p: f64 },
}

impl SymDist {
    pub fn is_gaussian(&self) -> bool {
        matches!(self, SymDist::Gaussian { .. })
    }
}

/// Where a node came from, for diagnostics and violation reports.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Origin {
    pub var: String,
    pub stmt: StmtId,
    pub line: u32,
    /// Innermost loop index value when the node was created, if any.
    pub iteration: Option<i64>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub dist: SymDist,
    pub origin: Origin,
    pub ann: Annotation,
    /// True once the node's distribution has absorbed an unsanctioned sample.
    pub tainted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum SymError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not gaussian")]
    NotGaussian(NodeId),
    #[error("node {0} still references unrealized parents")]
    NotRoot(NodeId),
    #[error("{child} does not reference {parent}")]
    NotParent { child: NodeId, parent: NodeId },
    #[error("swapping {child} with {parent} would create a cycle")]
    WouldCycle { child: NodeId, parent: NodeId },
    #[error("variance {0} is not positive and finite")]
    DegenerateVariance(f64),
    #[error("bernoulli weight {0} is outside [0, 1]")]
    BadWeight(f64),
}

/// Outcome of `hoist`: either the node now has a constant-mean marginal, or
/// an unrealized Bernoulli ancestor stands in the way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hoisted {
    Ok,
    Blocked { by: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Gaussian { mean: f64, var: f64 },
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct SymbolicState {
    nodes: BTreeMap<NodeId, Node>,
    /// Reverse mean-reference edges: children[p] holds every c whose mean
    /// references p. Kept in sync by `set_dist`.
    children: BTreeMap<NodeId, BTreeSet<NodeId>>,
    next_id: u64,
    /// Origins of exactness-annotated nodes whose distribution absorbed
    /// taint, in event order. Drained by the runtime.
    contaminations: Vec<Origin>,
}

impl SymbolicState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn live_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    fn get(&self, id: NodeId) -> Result<&Node, SymError> {
        self.nodes.get(&id).ok_or(SymError::UnknownNode(id))
    }

    /// Marks a freshly drawn unsanctioned value. Does not record a
    /// contamination: the caller reports direct samples itself.
    pub fn mark_tainted(&mut self, id: NodeId) {
        if let Some(n) = self.nodes.get_mut(&id) {
            n.tainted = true;
        }
    }

    /// Taints a node because contaminated information flowed into its
    /// distribution, recording the event for exactness-annotated nodes.
    fn taint_node(&mut self, id: NodeId) {
        let Some(n) = self.nodes.get_mut(&id) else {
            return;
        };
        if !n.tainted {
            n.tainted = true;
            if n.ann == Annotation::Exact {
                self.contaminations.push(n.origin.clone());
            }
        }
    }

    pub fn take_contaminations(&mut self) -> Vec<Origin> {
        std::mem::take(&mut self.contaminations)
    }

    pub fn parents_of(&self, id: NodeId) -> Vec<NodeId> {
        match self.nodes.get(&id).map(|n| &n.dist) {
            Some(SymDist::Gaussian { mean, .. }) => mean.refs().collect(),
            _ => Vec::new(),
        }
    }

    pub fn children_of(&self, id: NodeId) -> Vec<NodeId> {
        self.children
            .get(&id)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn is_root(&self, id: NodeId) -> bool {
        match self.nodes.get(&id).map(|n| &n.dist) {
            Some(SymDist::Gaussian { mean, .. }) => mean.is_const(),
            Some(SymDist::Bernoulli { .. }) => true,
            None => false,
        }
    }

    /// True when `a` is reachable from `b` along mean references (strictly
    /// above `b` in the network).
    pub fn is_ancestor_of(&self, a: NodeId, b: NodeId) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = self.parents_of(b);
        while let Some(p) = stack.pop() {
            if p == a {
                return true;
            }
            if seen.insert(p) {
                stack.extend(self.parents_of(p));
            }
        }
        false
    }

    pub fn assume(
        &mut self,
        origin: Origin,
        ann: Annotation,
        dist: SymDist,
        ctx_tainted: bool,
    ) -> Result<NodeId, SymError> {
        let mut tainted = ctx_tainted;
        match &dist {
            SymDist::Gaussian { mean, var } => {
                if !(var.is_finite() && *var > 0.0) {
                    return Err(SymError::DegenerateVariance(*var));
                }
                for r in mean.refs() {
                    tainted |= self.get(r)?.tainted;
                }
            }
            SymDist::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(SymError::BadWeight(*p));
                }
            }
        }
        let id = NodeId(self.next_id);
        self.next_id += 1;
        if let SymDist::Gaussian { mean, .. } = &dist {
            for r in mean.refs() {
                self.children.entry(r).or_default().insert(id);
            }
        }
        if tainted && ann == Annotation::Exact {
            self.contaminations.push(origin.clone());
        }
        self.nodes.insert(
            id,
            Node {
                dist,
                origin,
                ann,
                tainted,
            },
        );
        Ok(id)
    }

    /// Rewrites a node's distribution, keeping the reverse-edge index exact.
    fn set_dist(&mut self, id: NodeId, dist: SymDist) {
        if let SymDist::Gaussian { mean, .. } = &self.nodes[&id].dist {
            let old_refs: Vec<NodeId> = mean.refs().collect();
            for r in old_refs {
                if let Some(set) = self.children.get_mut(&r) {
                    set.remove(&id);
                    if set.is_empty() {
                        self.children.remove(&r);
                    }
                }
            }
        }
        if let SymDist::Gaussian { mean, .. } = &dist {
            for r in mean.refs() {
                self.children.entry(r).or_default().insert(id);
            }
        }
        self.nodes.get_mut(&id).unwrap().dist = dist;
    }

    /// Classic conjugate swap against a root parent.
    pub fn swap(&mut self, child: NodeId, parent: NodeId) -> Result<(), SymError> {
        if !self.is_root(parent) {
            return Err(SymError::NotRoot(parent));
        }
        self.gswap(child, parent)
    }

    /// Conjugate swap where the parent mean may itself be symbolic. The
    /// parent's marginal information flows into the child by substitution and
    /// the parent becomes a child of `child`. Sound whenever `parent` is not
    /// an ancestor of any other reference in the child's mean.
    pub(crate) fn gswap(&mut self, child: NodeId, parent: NodeId) -> Result<(), SymError> {
        let (mu_p, var_p) = match &self.get(parent)?.dist {
            SymDist::Gaussian { mean, var } => (mean.clone(), *var),
            SymDist::Bernoulli { .. } => return Err(SymError::NotGaussian(parent)),
        };
        let (child_mean, v) = match &self.get(child)?.dist {
            SymDist::Gaussian { mean, var } => (mean.clone(), *var),
            SymDist::Bernoulli { .. } => return Err(SymError::NotGaussian(child)),
        };
        let a = child_mean.coeff(parent);
        if a == 0.0 {
            return Err(SymError::NotParent { child, parent });
        }
        for q in child_mean.refs() {
            if q != parent && self.is_ancestor_of(parent, q) {
                return Err(SymError::WouldCycle { child, parent });
            }
        }
        let rest = child_mean.substitute(parent, &AffineExpr::konst(0.0));
        let child_new_mean = rest.plus(&mu_p.scaled(a));
        let child_new_var = a * a * var_p + v;
        if !(child_new_var.is_finite() && child_new_var > 0.0) {
            return Err(SymError::DegenerateVariance(child_new_var));
        }
        let k = a * var_p / child_new_var;
        let parent_new_mean = mu_p.plus(
            &AffineExpr::node(child)
                .minus(&child_new_mean)
                .scaled(k),
        );
        let parent_new_var = var_p * v / child_new_var;
        if !(parent_new_var.is_finite() && parent_new_var > 0.0) {
            return Err(SymError::DegenerateVariance(parent_new_var));
        }
        self.set_dist(
            child,
            SymDist::Gaussian {
                mean: child_new_mean,
                var: child_new_var,
            },
        );
        self.set_dist(
            parent,
            SymDist::Gaussian {
                mean: parent_new_mean,
                var: parent_new_var,
            },
        );
        let taint = self.nodes[&child].tainted || self.nodes[&parent].tainted;
        if taint {
            self.taint_node(child);
            self.taint_node(parent);
        }
        #[cfg(debug_assertions)]
        self.debug_validate();
        Ok(())
    }

    /// Drives `id` to a constant-mean marginal by swapping ancestors down,
    /// or reports the Bernoulli that blocks it.
    pub fn hoist(&mut self, id: NodeId) -> Result<Hoisted, SymError> {
        enum Frame {
            Hoist(NodeId),
            Swap { child: NodeId, parent: NodeId },
        }
        self.get(id)?;
        let mut work = vec![Frame::Hoist(id)];
        while let Some(frame) = work.pop() {
            match frame {
                Frame::Swap { child, parent } => {
                    self.gswap(child, parent)?;
                }
                Frame::Hoist(t) => {
                    let parents = self.parents_of(t);
                    match parents.len() {
                        0 => {}
                        1 => {
                            let p = parents[0];
                            if !self.nodes[&p].dist.is_gaussian() {
                                return Ok(Hoisted::Blocked { by: p });
                            }
                            work.push(Frame::Hoist(t));
                            work.push(Frame::Swap {
                                child: t,
                                parent: p,
                            });
                            work.push(Frame::Hoist(p));
                        }
                        _ => {
                            let mut gaussians: Vec<NodeId> = parents
                                .iter()
                                .copied()
                                .filter(|&p| self.nodes[&p].dist.is_gaussian())
                                .collect();
                            if gaussians.is_empty() {
                                // Bernoullis are always roots, so ties break
                                // to the smallest id.
                                let by = parents.into_iter().min().unwrap();
                                return Ok(Hoisted::Blocked { by });
                            }
                            gaussians.sort_unstable_by(|x, y| y.cmp(x));
                            let pick = gaussians
                                .iter()
                                .copied()
                                .find(|&p| {
                                    parents
                                        .iter()
                                        .all(|&q| q == p || !self.is_ancestor_of(p, q))
                                })
                                .expect("a swap-safe gaussian parent always exists");
                            self.gswap(t, pick)?;
                            work.push(Frame::Hoist(t));
                        }
                    }
                }
            }
        }
        Ok(Hoisted::Ok)
    }

    pub fn marginal(&self, id: NodeId) -> Result<Marginal, SymError> {
        match &self.get(id)?.dist {
            SymDist::Gaussian { mean, var } => match mean.constant() {
                Some(m) => Ok(Marginal::Gaussian { mean: m, var: *var }),
                None => Err(SymError::NotRoot(id)),
            },
            SymDist::Bernoulli { p } => Ok(Marginal::Bernoulli { p: *p }),
        }
    }

    /// Log density of the node's marginal at `value`. Requires a constant
    /// mean, which `hoist` establishes.
    pub fn score(&self, id: NodeId, value: f64) -> Result<f64, SymError> {
        match self.marginal(id)? {
            Marginal::Gaussian { mean, var } => {
                let d = value - mean;
                Ok(-0.5 * (std::f64::consts::TAU * var).ln() - d * d / (2.0 * var))
            }
            Marginal::Bernoulli { p } => {
                if value == 1.0 {
                    Ok(p.ln())
                } else if value == 0.0 {
                    Ok((1.0 - p).ln())
                } else {
                    Ok(f64::NEG_INFINITY)
                }
            }
        }
    }

    /// Conditions the network on `id = value` and drops the node. The node
    /// must have a constant-mean marginal. Children absorb the value into
    /// their means; taint flows with it.
    pub fn realize(&mut self, id: NodeId, value: f64) -> Result<(), SymError> {
        if !self.is_root(id) {
            return Err(SymError::NotRoot(id));
        }
        let tainted = self.get(id)?.tainted;
        for c in self.children_of(id) {
            let node = &self.nodes[&c];
            let SymDist::Gaussian { mean, var } = &node.dist else {
                continue;
            };
            let mut mean = mean.clone();
            mean.collapse(id, value);
            let var = *var;
            self.set_dist(c, SymDist::Gaussian { mean, var });
            if tainted {
                self.taint_node(c);
            }
        }
        self.nodes.remove(&id);
        self.children.remove(&id);
        #[cfg(debug_assertions)]
        self.debug_validate();
        Ok(())
    }

    /// Frees every node the environment no longer determines: unreachable
    /// nodes are dropped outright, and an unreferenced root with a single
    /// child is first swapped below that child so its information survives.
    pub fn reclaim(&mut self, env_roots: &BTreeSet<NodeId>) {
        loop {
            self.drop_unreachable(env_roots);
            let candidate = self.nodes.keys().copied().find(|&u| {
                !env_roots.contains(&u)
                    && self.is_root(u)
                    && self.nodes[&u].dist.is_gaussian()
                    && self.children.get(&u).map(|s| s.len()) == Some(1)
            });
            match candidate {
                Some(u) => {
                    let c = self.children_of(u)[0];
                    self.gswap(c, u).expect("single-child root swap is valid");
                }
                None => break,
            }
        }
    }

    fn drop_unreachable(&mut self, env_roots: &BTreeSet<NodeId>) {
        let mut keep = BTreeSet::new();
        let mut stack: Vec<NodeId> = env_roots
            .iter()
            .copied()
            .filter(|id| self.nodes.contains_key(id))
            .collect();
        while let Some(id) = stack.pop() {
            if keep.insert(id) {
                stack.extend(self.parents_of(id));
            }
        }
        let dead: Vec<NodeId> = self
            .nodes
            .keys()
            .copied()
            .filter(|id| !keep.contains(id))
            .collect();
        for &id in &dead {
            for r in self.parents_of(id) {
                if let Some(set) = self.children.get_mut(&r) {
                    set.remove(&id);
                    if set.is_empty() {
                        self.children.remove(&r);
                    }
                }
            }
        }
        for id in dead {
            // Children of a dead node are dead too, so no live mean can be
            // left dangling.
            self.nodes.remove(&id);
            self.children.remove(&id);
        }
    }

    /// Joint log density over all live nodes at the given assignment.
    /// Conjugate rewrites must leave this unchanged.
    pub fn log_joint(&self, values: &BTreeMap<NodeId, f64>) -> f64 {
        let mut acc = 0.0;
        for (&id, node) in &self.nodes {
            let v = values[&id];
            match &node.dist {
                SymDist::Gaussian { mean, var } => {
                    let m = mean.eval(|r| values[&r]);
                    let d = v - m;
                    acc += -0.5 * (std::f64::consts::TAU * var).ln() - d * d / (2.0 * var);
                }
                SymDist::Bernoulli { p } => {
                    acc += if v == 1.0 { p.ln() } else { (1.0 - p).ln() };
                }
            }
        }
        acc
    }

    /// Nodes in parent-before-child order, ties by id.
    pub fn topo_order(&self) -> Vec<NodeId> {
        let mut remaining: BTreeSet<NodeId> = self.nodes.keys().copied().collect();
        let mut placed = BTreeSet::new();
        let mut out = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let next = remaining
                .iter()
                .copied()
                .find(|&id| self.parents_of(id).iter().all(|p| placed.contains(p)));
            let id = next.expect("mean references form a dag");
            remaining.remove(&id);
            placed.insert(id);
            out.push(id);
        }
        out
    }

    /// Deterministic full-precision listing, for debugging and tests.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for id in self.topo_order() {
            let n = &self.nodes[&id];
            let _ = write!(
                out,
                "{id} {}@{} line {}",
                n.origin.var, n.origin.stmt, n.origin.line
            );
            if let Some(i) = n.origin.iteration {
                let _ = write!(out, " iter {i}");
            }
            match n.ann {
                Annotation::Approx => out.push_str(" approx"),
                Annotation::Exact => out.push_str(" exact"),
                Annotation::None => {}
            }
            if n.tainted {
                out.push_str(" tainted");
            }
            match &n.dist {
                SymDist::Gaussian { mean, var } => {
                    let _ = write!(out, " gaussian({:.16e}", mean.intercept);
                    for r in mean.refs() {
                        let _ = write!(out, " + {:.16e}*{r}", mean.coeff(r));
                    }
                    let _ = write!(out, ", {var:.16e})");
                }
                SymDist::Bernoulli { p } => {
                    let _ = write!(out, " bernoulli({p:.16e})");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Structural invariants: the reverse index matches the means, every
    /// reference resolves, variances are positive, and the graph is acyclic.
    pub fn debug_validate(&self) {
        for (&id, node) in &self.nodes {
            if let SymDist::Gaussian { mean, var } = &node.dist {
                assert!(var.is_finite() && *var > 0.0, "bad variance on {id}");
                for r in mean.refs() {
                    assert!(self.nodes.contains_key(&r), "{id} references dead {r}");
                    assert!(
                        self.children.get(&r).is_some_and(|s| s.contains(&id)),
                        "index missing {r} -> {id}"
                    );
                    assert!(mean.coeff(r) != 0.0, "zero coefficient kept on {id}");
                }
            }
        }
        for (&p, cs) in &self.children {
            for c in cs {
                let n = self.nodes.get(c).expect("indexed child exists");
                match &n.dist {
                    SymDist::Gaussian { mean, .. } => {
                        assert!(mean.coeff(p) != 0.0, "stale index {p} -> {c}")
                    }
                    _ => panic!("bernoulli {c} indexed as child"),
                }
            }
        }
        self.topo_order();
    }
}
