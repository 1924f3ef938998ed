//! Acceptance criteria at their pinned tolerances, one PASS/FAIL line each.
//!
//! Criteria run one after another so that the wall-clock budgets measure a
//! single run. Lines go straight to stderr and are visible without
//! `--nocapture`.

use std::io::Write;
use std::time::Instant;

use grokflow_harness::verify::{
    closed_form_equivalence, fast_phase_rate, figure2_reproduction, figure4_reproduction, invariant_suite,
    junction_approach, kkt_linear_regression, kkt_matrix_completion, nuclear_norm_drift, slow_phase_rate,
    threshold_heuristic, Check, Scale,
};

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Option<f64>,
    run: fn() -> Vec<Check>,
}

const SEED: u64 = 0;

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "closed-form equivalence", budget: Some(10.0), run: || vec![closed_form_equivalence(10)] },
        Criterion { id: 2, name: "fast-phase rate", budget: Some(30.0), run: || fast_phase_rate(SEED) },
        Criterion { id: 3, name: "junction", budget: Some(60.0), run: || junction_approach(SEED) },
        Criterion { id: 4, name: "slow-phase convergence", budget: Some(60.0), run: || slow_phase_rate(SEED) },
        Criterion {
            id: 5,
            name: "kkt limit",
            budget: Some(300.0),
            run: || {
                let mut c = kkt_linear_regression(SEED);
                c.extend(kkt_matrix_completion(SEED, Scale::Ci));
                c
            },
        },
        Criterion { id: 6, name: "figure 2 reproduction", budget: Some(600.0), run: || figure2_reproduction(Scale::Paper, 5) },
        Criterion { id: 7, name: "figure 4 reproduction", budget: None, run: || figure4_reproduction(Scale::Paper, 5) },
        Criterion { id: 8, name: "nuclear-norm drift", budget: Some(120.0), run: || nuclear_norm_drift(SEED) },
        Criterion { id: 9, name: "invariant suites", budget: Some(120.0), run: || invariant_suite(SEED) },
        Criterion { id: 10, name: "threshold heuristic", budget: Some(600.0), run: || threshold_heuristic(Scale::Ci) },
    ]
}

fn summarize(c: &Criterion, mut checks: Vec<Check>, seconds: f64) -> (bool, String) {
    if let Some(b) = c.budget {
        checks.push(Check::runtime("runtime", seconds, b));
    }
    let passed = !checks.is_empty() && checks.iter().all(|k| k.passed);
    let failed: Vec<String> = checks
        .iter()
        .filter(|k| !k.passed)
        .map(|k| {
            let m = k.measured.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3e}"));
            format!("{} measured {m} target {}", k.name, k.target)
        })
        .collect();
    let detail = if failed.is_empty() {
        format!("{} checks", checks.len())
    } else {
        failed.join("; ")
    };
    let line = format!(
        "{} criterion {} {}: {detail} [{seconds:.1} s]",
        if passed { "PASS" } else { "FAIL" },
        c.id,
        c.name
    );
    (passed, line)
}

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();
    for c in criteria() {
        let start = Instant::now();
        let checks = (c.run)();
        let (passed, line) = summarize(&c, checks, start.elapsed().as_secs_f64());
        let _ = writeln!(std::io::stderr(), "{line}");
        if !passed {
            failed.push(c.id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
