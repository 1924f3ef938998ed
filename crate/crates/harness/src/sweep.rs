//! λ-sweeps against an unregularised baseline.

use std::fs;
use std::path::Path;

use grokflow_core::flows::{junction_time, lipschitz_estimate, Trajectory};
use grokflow_core::problems::Problem;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, HarnessResult, IoContext};
use crate::run::{execute, Execution};

pub const SWEEP_FILE: &str = "sweep_summary.json";

/// Environment variable capping sweep concurrency.
pub const THREADS_ENV: &str = "GROKFLOW_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Junction {
    /// `t(λ) = −λ ln λ / (2c)` on the slow clock.
    pub slow_time: f64,
    pub distance_to_gf_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub lambda: f64,
    pub dir: String,
    pub error: Option<String>,
    pub failure: Option<String>,
    /// `sup_t ‖w^λ(t) − w^GF(t)‖` over the shared record times.
    pub sup_distance_to_baseline: Option<f64>,
    pub endpoint_kkt_residual: Option<f64>,
    /// `‖w^λ(T) − X⁺y‖` for linear regression.
    pub endpoint_min_norm_distance: Option<f64>,
    pub junction: Option<Junction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub name: String,
    pub lambdas: Vec<f64>,
    pub baseline_dir: String,
    pub lipschitz: Option<f64>,
    pub entries: Vec<SweepEntry>,
}

/// Worker count from `GROKFLOW_THREADS`, defaulting to the available cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every λ (concurrently, at most `thread_count()` at a time).
pub fn execute_grid(cfg: &ExperimentConfig, lambdas: &[f64]) -> HarnessResult<Vec<HarnessResult<Execution>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| HarnessError::Input(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| lambdas.par_iter().map(|&l| execute(&cfg.with_lambda(l))).collect()))
}

/// `sup_t ‖a(t) − b(t)‖` over the samples of `a`, interpolating `b`.
pub fn sup_distance(a: &Trajectory<f64>, b: &Trajectory<f64>) -> Option<f64> {
    let mut sup: Option<f64> = None;
    for (t, w) in a.times().iter().zip(a.states()) {
        let other = b.state_at(*t)?;
        let d = (w - other).norm();
        sup = Some(sup.map_or(d, |s: f64| s.max(d)));
    }
    sup
}

fn lambda_dir(lambda: f64) -> String {
    format!("lambda_{lambda:e}")
}

pub fn cmd_sweep(cfg: &ExperimentConfig, lambdas: &[f64], out: &Path) -> HarnessResult<SweepSummary> {
    if lambdas.len() < 2 {
        return Err(HarnessError::Input("a sweep needs at least two lambda values".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(HarnessError::Input(format!("sweep lambdas must be positive, got {bad}")));
    }
    cfg.validate()?;
    let mut grid = vec![0.0];
    grid.extend_from_slice(lambdas);
    let mut results = execute_grid(cfg, &grid)?;
    let baseline = results.remove(0)?;
    fs::create_dir_all(out).at(out)?;
    let baseline_dir = lambda_dir(0.0);
    baseline.write(&out.join(&baseline_dir))?;

    let p = &baseline.instance.problem;
    let lipschitz = match cfg.lipschitz {
        Some(c) => Some(c),
        None => lipschitz_estimate(p, baseline.trajectory.states()).ok(),
    };
    let gf_point = baseline.gf_limit.as_ref().map(|g| g.point.clone());
    let mut entries = Vec::with_capacity(lambdas.len());
    for (&lambda, res) in lambdas.iter().zip(results) {
        let dir = lambda_dir(lambda);
        let mut entry = SweepEntry {
            lambda,
            dir: dir.clone(),
            error: None,
            failure: None,
            sup_distance_to_baseline: None,
            endpoint_kkt_residual: None,
            endpoint_min_norm_distance: None,
            junction: None,
        };
        match res {
            Err(e) => {
                log::warn!("sweep member lambda = {lambda:e} failed: {e}");
                entry.error = Some(e.to_string());
            }
            Ok(exec) => {
                let report = exec.write(&out.join(&dir))?;
                entry.failure = report.failure.clone();
                entry.endpoint_kkt_residual = report.summary.final_kkt_residual;
                entry.sup_distance_to_baseline = sup_distance(&exec.trajectory, &baseline.trajectory);
                if let Problem::LinearRegression(lr) = p {
                    entry.endpoint_min_norm_distance = Some((exec.final_state() - lr.min_norm_solution()).norm());
                }
                if let (Some(c), Some(phi)) = (lipschitz, &gf_point) {
                    if lambda < 1.0 {
                        let s = junction_time(lambda, c)?;
                        entry.junction = exec.trajectory.state_at(s / lambda).map(|w| Junction {
                            slow_time: s,
                            distance_to_gf_limit: (w - phi).norm(),
                        });
                    }
                }
            }
        }
        entries.push(entry);
    }
    let summary = SweepSummary {
        schema_version: crate::config::SCHEMA_VERSION,
        name: cfg.display_name(),
        lambdas: lambdas.to_vec(),
        baseline_dir,
        lipschitz,
        entries,
    };
    let path = out.join(SWEEP_FILE);
    fs::write(&path, serde_json::to_string_pretty(&summary).expect("serialisable") + "\n").at(&path)?;
    Ok(summary)
}

/// Parses `1e-2,1e-3,1e-4`.
pub fn parse_lambdas(text: &str) -> HarnessResult<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| HarnessError::Input(format!("'{s}' is not a number")))
        })
        .collect()
}
