//! Serializable report shapes shared by the command line and browser front
//! ends. Key order is the wire format; keep field order stable.

use crate::lang::{stmt_head, CheckedProgram};
use crate::lang::ast::StmtId;
use crate::runtime::{Posterior, RunResult, SampledVar};
use crate::verify::{DivisionReport, MemoryVerdict, SiteVerdict};
use serde::Serialize;

#[derive(Serialize)]
pub struct ExactRow {
    pub var: String,
    pub site: StmtId,
    pub verdict: &'static str,
    /// Head of the statement that forced or contaminated the draw.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Serialize)]
pub struct MemoryRow {
    pub verdict: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

#[derive(Serialize)]
pub struct AnalyzeReport {
    pub exact: Vec<ExactRow>,
    pub memory: MemoryRow,
}

impl AnalyzeReport {
    pub fn new(cp: &CheckedProgram, division: &DivisionReport, memory: &MemoryVerdict) -> Self {
        let exact = division
            .sites
            .iter()
            .map(|site| {
                let (verdict, reason) = match &site.verdict {
                    SiteVerdict::Verified => ("verified", None),
                    SiteVerdict::Refuted { reason } => (
                        "refuted",
                        Some(
                            stmt_head(&cp.program, *reason)
                                .unwrap_or_else(|| reason.to_string()),
                        ),
                    ),
                    SiteVerdict::Unknown => ("unknown", None),
                };
                ExactRow {
                    var: site.var.clone(),
                    site: site.site,
                    verdict,
                    reason,
                }
            })
            .collect();
        let memory = match memory {
            MemoryVerdict::Bounded { bound, m } => MemoryRow {
                verdict: "bounded",
                bound: Some(*bound),
                m: Some(*m),
                witness: None,
            },
            MemoryVerdict::Unbounded { witness_var, .. } => MemoryRow {
                verdict: "unbounded",
                bound: None,
                m: None,
                witness: Some(witness_var.clone()),
            },
            MemoryVerdict::Unknown => MemoryRow {
                verdict: "unknown",
                bound: None,
                m: None,
                witness: None,
            },
        };
        AnalyzeReport { exact, memory }
    }
}

#[derive(Serialize)]
pub struct DiagnosticsReport<'a> {
    pub sampled_vars: &'a [SampledVar],
    pub peak_live: usize,
    pub live_trace: &'a [usize],
}

#[derive(Serialize)]
pub struct InferReport<'a> {
    pub posterior: &'a Posterior,
    pub log_evidence: f64,
    pub diagnostics: DiagnosticsReport<'a>,
    /// Rendered exactness violations; absent when the run is clean or the
    /// caller reports them out of band.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violations: Option<Vec<String>>,
}

impl<'a> InferReport<'a> {
    pub fn new(r: &'a RunResult) -> Self {
        InferReport {
            posterior: &r.posterior,
            log_evidence: r.log_evidence,
            diagnostics: DiagnosticsReport {
                sampled_vars: &r.diagnostics.sampled_vars,
                peak_live: r.diagnostics.peak_live,
                live_trace: &r.diagnostics.live_trace,
            },
            violations: None,
        }
    }

    /// Folds the run's violations into the document body.
    pub fn with_violations(r: &'a RunResult) -> Self {
        let mut doc = Self::new(r);
        if !r.diagnostics.violations.is_empty() {
            doc.violations = Some(
                r.diagnostics
                    .violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect(),
            );
        }
        doc
    }
}
