//! Run, sweep and analyze behaviour through the library entry points.

use grokflow_harness::analyze::cmd_analyze;
use grokflow_harness::config::{InitSpec, OptimizerSpec};
use grokflow_harness::recipes::{names, recipe};
use grokflow_harness::report::REPORT_FILE;
use grokflow_harness::run::{cmd_run, execute};
use grokflow_harness::schema;
use grokflow_harness::sweep::cmd_sweep;
use grokflow_harness::{ExperimentConfig, RunReport};
use serde_json::Value;

fn ci_recipes() -> Vec<ExperimentConfig> {
    names()
        .filter(|n| n.ends_with("_ci"))
        .map(|n| recipe(n).unwrap())
        .collect()
}

fn linreg(horizon: f64) -> ExperimentConfig {
    let mut cfg = recipe("fig_linreg_ci").unwrap();
    cfg.optimizer = OptimizerSpec::Flow {
        horizon,
        method: Default::default(),
        rel_tol: None,
        abs_tol: None,
        step: None,
        max_steps: None,
    };
    cfg
}

#[test]
fn identical_config_gives_identical_csv() {
    for cfg in ci_recipes() {
        let (a, b) = (execute(&cfg).unwrap(), execute(&cfg).unwrap());
        assert_eq!(a.trajectory.to_csv(), b.trajectory.to_csv(), "{}", cfg.display_name());
    }
}

#[test]
fn different_seeds_differ() {
    let cfg = recipe("fig_linreg_ci").unwrap();
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(execute(&cfg).unwrap().trajectory.to_csv(), execute(&other).unwrap().trajectory.to_csv());
}

#[test]
fn every_ci_report_matches_the_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let report_schema = schema::report_schema();
    for cfg in ci_recipes() {
        let dir = tmp.path().join(cfg.display_name());
        let written = cmd_run(&cfg, &dir).unwrap();
        let text = std::fs::read_to_string(dir.join(REPORT_FILE)).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        schema::validate(&v, &report_schema).unwrap_or_else(|e| panic!("{}: {e:?}", cfg.display_name()));
        let parsed: RunReport = serde_json::from_value(v).unwrap();
        assert_eq!(parsed, written);
        let cfg_text = std::fs::read_to_string(dir.join("config.json")).unwrap();
        schema::validate(&serde_json::from_str(&cfg_text).unwrap(), &schema::config_schema()).unwrap();
    }
}

#[test]
fn fast_phase_distance_is_linear_in_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let s = cmd_sweep(&linreg(5.0), &[1e-2, 1e-3, 1e-4], tmp.path()).unwrap();
    let d: Vec<f64> = s.entries.iter().map(|e| e.sup_distance_to_baseline.unwrap()).collect();
    for w in d.windows(2) {
        let ratio = w[0] / w[1];
        assert!((5.0..=20.0).contains(&ratio), "distances {d:?}");
    }
}

#[test]
fn endpoint_approaches_min_norm_solution_as_lambda_shrinks() {
    let tmp = tempfile::tempdir().unwrap();
    let s = cmd_sweep(&linreg(4e5), &[1e-2, 1e-3, 1e-4], tmp.path()).unwrap();
    let d: Vec<f64> = s.entries.iter().map(|e| e.endpoint_min_norm_distance.unwrap()).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "distances {d:?}");
    assert!(d[2] < 1e-2, "distances {d:?}");
}

#[test]
fn zero_horizon_records_the_initial_point() {
    let ex = execute(&linreg(0.0)).unwrap();
    assert_eq!(ex.trajectory.times(), &[0.0]);
    assert_eq!(ex.final_state(), &ex.instance.w0);
}

#[test]
fn zero_lambda_never_expects_grokking() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = recipe("fig2_matrix_completion_ci").unwrap();
    cfg.lambda = 0.0;
    cmd_run(&cfg, tmp.path()).unwrap();
    let a = cmd_analyze(tmp.path()).unwrap();
    assert!(!a.timescale.grokking_expected);
    assert!(a.timescale.t_wd.is_none());
}

#[test]
fn matrix_completion_recipe_groks() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_run(&recipe("fig2_matrix_completion_ci").unwrap(), tmp.path()).unwrap();
    let a = cmd_analyze(tmp.path()).unwrap();
    assert!(a.timescale.grokking_expected);
    assert!(a.signature);
    assert!(a.timescale.t_gf.unwrap() < a.timescale.drop_start.unwrap());
    assert!(a.relative_norm_drop > 0.1);
}

#[test]
fn small_initialisation_leaves_little_norm_to_remove() {
    let norm_drop = |variance: f64| {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = recipe("fig4_diagonal_ci").unwrap();
        cfg.init = InitSpec::Gaussian { variance };
        cmd_run(&cfg, tmp.path()).unwrap();
        cmd_analyze(tmp.path()).unwrap().relative_norm_drop
    };
    let (small, large) = (norm_drop(1e-4), norm_drop(0.1));
    assert!(small < 0.5 * large, "small init {small}, large init {large}");
}
