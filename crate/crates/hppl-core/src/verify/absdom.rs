//! Abstract values for the division analysis. The lattice tracks how the
//! runtime can represent a variable: still linear-Gaussian (with the
//! variables its mean may reach), a discrete draw, already concrete, or
//! untracked.

use crate::lang::ast::StmtId;
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbsVal {
    Bot,
    LinGauss { deps: BTreeSet<String> },
    Discrete,
    Realized,
    Top { deps: BTreeSet<String> },
}

impl AbsVal {
    pub fn lin(deps: BTreeSet<String>) -> Self {
        AbsVal::LinGauss { deps }
    }

    pub fn deps(&self) -> BTreeSet<String> {
        match self {
            AbsVal::LinGauss { deps } | AbsVal::Top { deps } => deps.clone(),
            _ => BTreeSet::new(),
        }
    }

    pub fn le(&self, other: &AbsVal) -> bool {
        match (self, other) {
            (AbsVal::Bot, _) => true,
            (_, AbsVal::Top { deps: od }) => self.deps().is_subset(od),
            (AbsVal::LinGauss { deps: a }, AbsVal::LinGauss { deps: b }) => a.is_subset(b),
            (AbsVal::Discrete, AbsVal::Discrete) => true,
            (AbsVal::Realized, AbsVal::Realized) => true,
            _ => false,
        }
    }

    pub fn join(&self, other: &AbsVal) -> AbsVal {
        match (self, other) {
            (AbsVal::Bot, x) | (x, AbsVal::Bot) => x.clone(),
            (AbsVal::LinGauss { deps: a }, AbsVal::LinGauss { deps: b }) => {
                AbsVal::lin(a.union(b).cloned().collect())
            }
            (AbsVal::Discrete, AbsVal::Discrete) => AbsVal::Discrete,
            (AbsVal::Realized, AbsVal::Realized) => AbsVal::Realized,
            (a, b) => AbsVal::Top {
                deps: a.deps().union(&b.deps()).cloned().collect(),
            },
        }
    }

    pub fn describe(&self) -> String {
        match self {
            AbsVal::Bot => "unreachable".to_string(),
            AbsVal::LinGauss { deps } => {
                if deps.is_empty() {
                    "linear-gaussian".to_string()
                } else {
                    let list: Vec<&str> = deps.iter().map(|s| s.as_str()).collect();
                    format!("linear-gaussian over {{{}}}", list.join(", "))
                }
            }
            AbsVal::Discrete => "discrete".to_string(),
            AbsVal::Realized => "realized".to_string(),
            AbsVal::Top { .. } => "untracked".to_string(),
        }
    }
}

/// One abstract binding: the value class plus the earliest statement whose
/// unsanctioned draw may flow into the value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub val: AbsVal,
    pub taint: Option<StmtId>,
}

impl Cell {
    pub fn clean(val: AbsVal) -> Self {
        Cell { val, taint: None }
    }

    pub fn join(&self, other: &Cell) -> Cell {
        Cell {
            val: self.val.join(&other.val),
            taint: merge_taint(self.taint, other.taint),
        }
    }
}

pub fn merge_taint(a: Option<StmtId>, b: Option<StmtId>) -> Option<StmtId> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if x.0 <= y.0 { x } else { y }),
        (x, None) => x,
        (None, y) => y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_deps() -> impl Strategy<Value = BTreeSet<String>> {
        proptest::collection::btree_set("[abc]", 0..3)
    }

    fn absval() -> impl Strategy<Value = AbsVal> {
        prop_oneof![
            Just(AbsVal::Bot),
            small_deps().prop_map(AbsVal::lin),
            Just(AbsVal::Discrete),
            Just(AbsVal::Realized),
            small_deps().prop_map(|deps| AbsVal::Top { deps }),
        ]
    }

    proptest! {
        #[test]
        fn join_is_least_upper_bound(a in absval(), b in absval()) {
            let j = a.join(&b);
            prop_assert!(a.le(&j));
            prop_assert!(b.le(&j));
            prop_assert_eq!(a.join(&b), b.join(&a));
        }

        #[test]
        fn join_is_monotone(a in absval(), b in absval(), c in absval()) {
            let ab = a.join(&b);
            prop_assert!(a.join(&c).le(&ab.join(&c)));
            prop_assert_eq!(a.join(&a), a.clone());
            prop_assert_eq!(a.join(&b).join(&c), a.join(&b.join(&c)));
        }
    }

    #[test]
    fn order_spot_checks() {
        let lg = AbsVal::lin(BTreeSet::from(["x".to_string()]));
        let top = AbsVal::Top {
            deps: BTreeSet::from(["x".to_string(), "y".to_string()]),
        };
        assert!(lg.le(&top));
        assert!(!top.le(&lg));
        assert!(!AbsVal::Discrete.le(&AbsVal::Realized));
        assert_eq!(
            AbsVal::Discrete.join(&AbsVal::Realized),
            AbsVal::Top { deps: BTreeSet::new() }
        );
    }
}
