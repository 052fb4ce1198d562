//! Affine forms over unrealized random variables. Terms with an exactly zero
//! coefficient are removed, so equal forms compare equal structurally.

use super::state::NodeId;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    pub intercept: f64,
    terms: BTreeMap<NodeId, f64>,
}

impl AffineExpr {
    pub fn konst(v: f64) -> Self {
        AffineExpr {
            intercept: v,
            terms: BTreeMap::new(),
        }
    }

    pub fn node(id: NodeId) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(id, 1.0);
        AffineExpr {
            intercept: 0.0,
            terms,
        }
    }

    pub fn is_const(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn constant(&self) -> Option<f64> {
        self.is_const().then_some(self.intercept)
    }

    pub fn coeff(&self, id: NodeId) -> f64 {
        self.terms.get(&id).copied().unwrap_or(0.0)
    }

    pub fn refs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.terms.keys().copied()
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    fn set(&mut self, id: NodeId, coeff: f64) {
        if coeff == 0.0 {
            self.terms.remove(&id);
        } else {
            self.terms.insert(id, coeff);
        }
    }

    pub fn add_term(&mut self, id: NodeId, coeff: f64) {
        let c = self.coeff(id) + coeff;
        self.set(id, c);
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.intercept += other.intercept;
        for (&id, &c) in &other.terms {
            out.add_term(id, c);
        }
        out
    }

    pub fn minus(&self, other: &Self) -> Self {
        self.plus(&other.scaled(-1.0))
    }

    pub fn scaled(&self, s: f64) -> Self {
        if s == 0.0 {
            return AffineExpr::konst(0.0);
        }
        AffineExpr {
            intercept: self.intercept * s,
            terms: self.terms.iter().map(|(&id, &c)| (id, c * s)).collect(),
        }
    }

    pub fn plus_const(&self, v: f64) -> Self {
        let mut out = self.clone();
        out.intercept += v;
        out
    }

    /// Replaces the `id` term (if any) with `coeff * replacement`.
    pub fn substitute(&self, id: NodeId, replacement: &Self) -> Self {
        let a = self.coeff(id);
        if a == 0.0 {
            return self.clone();
        }
        let mut out = self.clone();
        out.set(id, 0.0);
        out.plus(&replacement.scaled(a))
    }

    /// Folds a realized value into the form, dropping the term.
    pub fn collapse(&mut self, id: NodeId, value: f64) {
        let a = self.coeff(id);
        if a != 0.0 {
            self.set(id, 0.0);
            self.intercept += a * value;
        }
    }

    pub fn eval(&self, mut lookup: impl FnMut(NodeId) -> f64) -> f64 {
        let mut acc = self.intercept;
        for (&id, &c) in &self.terms {
            acc += c * lookup(id);
        }
        acc
    }
}
