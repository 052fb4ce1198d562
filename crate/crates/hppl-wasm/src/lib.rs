//! Browser bindings. Each export takes model source text (plus CSV data for
//! inference) and returns a JSON string in the same shape the command line
//! emits, so the demo page and scripts can share tooling. Errors come back as
//! `{"error": "..."}` instead of throwing across the boundary.

use hppl_core::lang;
use hppl_core::report::{AnalyzeReport, InferReport};
use hppl_core::runtime::{run, DataTable, EngineKind, RunConfig};
use hppl_core::verify::{analyze_division, analyze_memory, MemConfig};
use std::collections::BTreeMap;
use wasm_bindgen::prelude::*;

fn err_json(e: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": e.to_string() }).to_string()
}

/// Parses and validates a model. On success reports the model name, site
/// counts, and the canonically rendered source.
#[wasm_bindgen]
pub fn check(source: &str) -> String {
    match lang::load(source, &BTreeMap::new()) {
        Ok(cp) => serde_json::json!({
            "ok": true,
            "name": cp.program.name,
            "sample_sites": cp.info.sample_sites.len(),
            "observe_sites": cp.info.observe_sites.len(),
            "rendered": lang::render(&cp.program),
        })
        .to_string(),
        Err(e) => err_json(e),
    }
}

/// Runs both static verifiers and reports per-annotation verdicts plus the
/// memory verdict.
#[wasm_bindgen]
pub fn analyze(source: &str) -> String {
    match lang::load(source, &BTreeMap::new()) {
        Ok(cp) => {
            let division = analyze_division(&cp);
            let memory = analyze_memory(&cp, &MemConfig::default());
            serde_json::to_string_pretty(&AnalyzeReport::new(&cp, &division, &memory)).unwrap()
        }
        Err(e) => err_json(e),
    }
}

/// Runs particle inference. `data_csv` may be empty when the model takes no
/// data; `engine` is "ssi" or "ds". Violations, if any, come back in a
/// `violations` array alongside the posterior.
#[wasm_bindgen]
pub fn infer(source: &str, data_csv: &str, engine: &str, particles: u32, seed: u32) -> String {
    let cp = match lang::load(source, &BTreeMap::new()) {
        Ok(cp) => cp,
        Err(e) => return err_json(e),
    };
    let data = if data_csv.trim().is_empty() {
        DataTable::new()
    } else {
        match DataTable::from_csv(data_csv) {
            Ok(d) => d,
            Err(e) => return err_json(e),
        }
    };
    let cfg = RunConfig {
        engine: match engine {
            "ds" => EngineKind::Ds,
            _ => EngineKind::Ssi,
        },
        particles: particles.max(1) as usize,
        seed: seed as u64,
        resample_threshold: 0.5,
        parallel: false,
    };
    match run(&cp, &data, &cfg) {
        Ok(r) => serde_json::to_string_pretty(&InferReport::with_violations(&r)).unwrap(),
        Err(e) => err_json(e),
    }
}
