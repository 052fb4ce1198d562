//! Inference outputs: posterior mixtures, run diagnostics, and errors.

use crate::lang::ast::StmtId;
use crate::symbolic::SymError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    Gaussian { mean: f64, var: f64 },
    Value { value: f64 },
    Bernoulli { p: f64 },
}

impl Component {
    fn tag(&self) -> u8 {
        match self {
            Component::Gaussian { .. } => 0,
            Component::Value { .. } => 1,
            Component::Bernoulli { .. } => 2,
        }
    }

    fn bits(&self) -> (u64, u64) {
        match *self {
            Component::Gaussian { mean, var } => (mean.to_bits(), var.to_bits()),
            Component::Value { value } => (value.to_bits(), 0),
            Component::Bernoulli { p } => (p.to_bits(), 0),
        }
    }

    fn moments(&self) -> (f64, f64) {
        match *self {
            Component::Gaussian { mean, var } => (mean, var),
            Component::Value { value } => (value, 0.0),
            Component::Bernoulli { p } => (p, p * (1.0 - p)),
        }
    }

    fn fields(&self) -> (f64, f64) {
        match *self {
            Component::Gaussian { mean, var } => (mean, var),
            Component::Value { value } => (value, 0.0),
            Component::Bernoulli { p } => (p, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedComponent {
    pub weight: f64,
    #[serde(flatten)]
    pub component: Component,
}

/// A normalized mixture over closed-form components, one per distinct
/// particle outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Posterior {
    pub components: Vec<WeightedComponent>,
    pub mean: f64,
    pub var: f64,
}

const WEIGHT_FLOOR: f64 = 1e-12;

impl Posterior {
    /// Builds the mixture from weighted outcomes in slot order: bit-equal
    /// components merge, negligible weights drop, the rest renormalize.
    pub fn from_weighted(outcomes: &[(f64, Component)]) -> Posterior {
        let total: f64 = outcomes.iter().map(|(w, _)| w).sum();
        let mut index: std::collections::BTreeMap<(u8, u64, u64), usize> =
            std::collections::BTreeMap::new();
        let mut merged: Vec<(Component, f64)> = Vec::new();
        for &(w, c) in outcomes {
            let key = (c.tag(), c.bits().0, c.bits().1);
            match index.get(&key) {
                Some(&i) => merged[i].1 += w,
                None => {
                    index.insert(key, merged.len());
                    merged.push((c, w));
                }
            }
        }
        let mut kept: Vec<WeightedComponent> = merged
            .into_iter()
            .filter(|(_, w)| *w / total >= WEIGHT_FLOOR)
            .map(|(component, weight)| WeightedComponent { weight, component })
            .collect();
        let norm: f64 = kept.iter().map(|wc| wc.weight).sum();
        for wc in &mut kept {
            wc.weight /= norm;
        }
        kept.sort_by(|a, b| {
            let (a1, a2) = a.component.fields();
            let (b1, b2) = b.component.fields();
            a.component
                .tag()
                .cmp(&b.component.tag())
                .then(a1.total_cmp(&b1))
                .then(a2.total_cmp(&b2))
        });
        let mut mean = 0.0;
        for wc in &kept {
            mean += wc.weight * wc.component.moments().0;
        }
        let mut var = 0.0;
        for wc in &kept {
            let (m, v) = wc.component.moments();
            var += wc.weight * (v + m * m);
        }
        var -= mean * mean;
        Posterior {
            components: kept,
            mean,
            var,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct SampledVar {
    pub var: String,
    pub stmt: StmtId,
    pub iteration: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Sampled,
    Contaminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub var: String,
    pub line: u32,
    pub iteration: Option<i64>,
    pub kind: ViolationKind,
}

impl Violation {
    /// Sort key: earliest iteration first, then source position.
    pub fn key(&self) -> (i64, u32, String, ViolationKind) {
        (
            self.iteration.unwrap_or(i64::MIN),
            self.line,
            self.var.clone(),
            self.kind,
        )
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ExactViolation: {} at line {}", self.var, self.line)?;
        if let Some(i) = self.iteration {
            write!(f, ", iteration {i}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub sampled_vars: Vec<SampledVar>,
    pub peak_live: usize,
    pub live_trace: Vec<usize>,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub posterior: Posterior,
    pub log_evidence: f64,
    pub diagnostics: Diagnostics,
}

impl RunResult {
    pub fn exact_violation_report(&self) -> Option<String> {
        self.diagnostics.violations.first().map(|v| v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferError {
    #[error("no data column `{param}`")]
    MissingData { param: String },
    #[error("data index {index} is out of range for `{param}` at line {line}")]
    DataRange {
        param: String,
        index: i64,
        line: u32,
    },
    #[error("`{var}` was already realized when observed at line {line}")]
    ObserveRealized { var: String, line: u32 },
    #[error("variance evaluated to {value} at line {line}")]
    BadVariance { value: f64, line: u32 },
    #[error("all particles have zero weight")]
    AllParticlesDead,
    #[error("symbolic state: {0}")]
    Sym(#[from] SymError),
    #[error("exact enumeration requires a gaussian draw; result is not enumerable")]
    NonEnumerable,
    #[error("exact enumeration exceeds {max} discrete choices")]
    TooManyDiscrete { max: usize },
    #[doc(hidden)]
    #[error("choice script exhausted")]
    ScriptExhausted,
}
