//! The bindings compile as plain functions off the wasm target, so the JSON
//! contract can be tested on the host.

use hppl_wasm::{analyze, check, infer};
use serde_json::Value;

const MODEL: &str = r#"const N = 3;

function walk(yobs) {
    x <- exact gaussian(0., 100.);
    for i in 1 .. N {
        x <- exact gaussian(x, 1.);
        y <- gaussian(x, 1.);
        observe(y, yobs[i]);
    }
    x
}
"#;

const CSV: &str = "yobs\n0.4\n-0.1\n0.9\n";

const GATED: &str = r#"function gated(d) {
    x <- exact gaussian(0., 1.);
    o <- bernoulli(0.5);
    if (o) {
        y <- gaussian(x, 1.);
    } else {
        y <- gaussian(0., 1.);
    }
    observe(y, d[1]);
    x
}
"#;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).expect("binding output must be JSON")
}

#[test]
fn check_reports_site_counts_or_an_error() {
    let v = parse(&check(MODEL));
    assert_eq!(v["ok"], true);
    assert_eq!(v["name"], "walk");
    assert_eq!(v["sample_sites"], 3);
    assert_eq!(v["observe_sites"], 1);
    assert!(v["rendered"].as_str().unwrap().contains("for i in 1 .. N"));

    let e = parse(&check("function broken( {"));
    assert!(e["error"].as_str().unwrap().contains("line 1"));
}

#[test]
fn analyze_reports_verdicts_in_the_wire_shape() {
    let v = parse(&analyze(MODEL));
    let exact = v["exact"].as_array().unwrap();
    assert_eq!(exact.len(), 2);
    for row in exact {
        assert_eq!(row["var"], "x");
        assert_eq!(row["verdict"], "verified");
    }
    assert_eq!(v["memory"]["verdict"], "bounded");
    assert_eq!(v["memory"]["bound"], 3);

    let g = parse(&analyze(GATED));
    assert_eq!(g["exact"][0]["verdict"], "refuted");
    assert_eq!(g["exact"][0]["reason"], "if(o)");
}

#[test]
fn infer_returns_the_posterior_and_surfaces_violations() {
    let v = parse(&infer(MODEL, CSV, "ssi", 200, 1));
    assert!(v["posterior"]["mean"].is_f64());
    assert!(v["posterior"]["var"].is_f64());
    assert!(v["log_evidence"].is_f64());
    assert_eq!(v["diagnostics"]["sampled_vars"].as_array().unwrap().len(), 0);
    assert!(v["diagnostics"]["peak_live"].as_u64().unwrap() <= 3);
    assert_eq!(v["diagnostics"]["live_trace"].as_array().unwrap().len(), 3);
    assert!(v.get("violations").is_none());

    let w = parse(&infer(GATED, "d\n0.3\n", "ssi", 50, 1));
    let violations = w["violations"].as_array().unwrap();
    assert!(violations[0].as_str().unwrap().starts_with("ExactViolation: x"));

    let e = parse(&infer(MODEL, "", "ssi", 50, 1));
    assert!(e["error"].as_str().unwrap().contains("yobs"));
}

#[test]
fn engines_and_seeds_change_only_what_they_should() {
    let a = infer(MODEL, CSV, "ssi", 100, 7);
    let b = infer(MODEL, CSV, "ssi", 100, 7);
    assert_eq!(a, b);

    let ds = parse(&infer(MODEL, CSV, "ds", 100, 7));
    assert!(ds["posterior"]["mean"].is_f64());
}
