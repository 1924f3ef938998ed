//! Single runs: integrate a config and write its artefacts.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use grokflow_core::flows::{
    integrate_gd, integrate_regularized, phi_map, sidecar, FlowError, FlowFailure, IntegratorSpec, PhiStop,
    Timescale, Trajectory,
};
use grokflow_core::manifold::{self, integrate_riemannian_flow, ManifoldPoint, Retraction};
use grokflow_core::oracles::{grok_threshold, timescale_report, TimescaleReport};
use grokflow_core::problems::{Objective, Problem};
use nalgebra::DVector;
use serde_json::json;

use crate::config::{ExperimentConfig, OptimizerSpec};
use crate::error::{HarnessError, HarnessResult, IoContext};
use crate::instance::Instance;
use crate::report::*;

/// Unregularised limit `Φ(w0)` as used for the threshold heuristic.
#[derive(Debug, Clone)]
pub struct GfLimit {
    pub point: DVector<f64>,
    pub converged: bool,
    pub threshold: f64,
}

/// An in-memory run.
#[derive(Debug, Clone)]
pub struct Execution {
    pub config: ExperimentConfig,
    pub instance: Instance,
    pub trajectory: Trajectory<f64>,
    pub failure: Option<String>,
    pub gf_limit: Option<GfLimit>,
    pub timescale: Option<TimescaleReport>,
    pub wall_clock_seconds: f64,
}

fn initial_only(p: &Problem<f64>, w0: &DVector<f64>, lambda: f64, tag: Timescale) -> HarnessResult<Trajectory<f64>> {
    Ok(Trajectory::evaluate(p, lambda, vec![0.0], vec![w0.clone()], tag)?)
}

/// Keeps partial output of failed integrations; input errors stay errors.
fn settle(
    result: Result<Trajectory<f64>, FlowError<f64>>,
    fallback: impl FnOnce() -> HarnessResult<Trajectory<f64>>,
) -> HarnessResult<(Trajectory<f64>, Option<String>)> {
    match result {
        Ok(t) => Ok((t, None)),
        Err(FlowError {
            failure: FlowFailure::Problem(e),
            partial: None,
        }) => Err(HarnessError::Core(e)),
        Err(FlowError { failure, partial }) => {
            let msg = failure.to_string();
            log::warn!("integration stopped early: {msg}");
            let tr = match partial {
                Some(t) if !t.is_empty() => *t,
                _ => fallback()?,
            };
            Ok((tr, Some(msg)))
        }
    }
}

/// `Φ(w0)` by unregularised flow and `‖∇F(w0)‖ / ‖Φ(w0)‖`.
pub fn gf_limit(p: &Problem<f64>, w0: &DVector<f64>, max_time: f64) -> HarnessResult<GfLimit> {
    let stop = PhiStop {
        grad_tol: None,
        max_time: Some(max_time),
    };
    let (point, converged) = match phi_map(p, w0, stop, &IntegratorSpec::default()) {
        Ok(r) => (r.point, r.converged),
        Err(FlowError {
            failure: FlowFailure::Problem(e),
            ..
        }) => return Err(e.into()),
        Err(FlowError { failure, partial }) => {
            log::warn!("unregularised limit not reached: {failure}");
            let last = partial.and_then(|t| t.final_state().cloned()).unwrap_or_else(|| w0.clone());
            (last, false)
        }
    };
    let threshold = grok_threshold(p, w0, &point)?;
    Ok(GfLimit {
        point,
        converged,
        threshold,
    })
}

/// Runs `cfg` without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> HarnessResult<Execution> {
    cfg.validate()?;
    let start = Instant::now();
    let instance = Instance::build(cfg)?;
    let (p, w0, lambda) = (&instance.problem, &instance.w0, cfg.lambda);
    let mut gf = None;
    let (trajectory, failure) = match &cfg.optimizer {
        OptimizerSpec::Gd { step, iterations } => {
            if *iterations == 0 {
                (initial_only(p, w0, lambda, Timescale::Fast)?, None)
            } else {
                let r = integrate_gd(p, w0, lambda, *step, *iterations, &cfg.record_schedule());
                settle(r, || initial_only(p, w0, lambda, Timescale::Fast))?
            }
        }
        OptimizerSpec::Flow {
            horizon,
            method,
            rel_tol,
            abs_tol,
            step,
            max_steps,
        } => {
            if *horizon == 0.0 {
                (initial_only(p, w0, lambda, Timescale::Fast)?, None)
            } else {
                let spec = cfg.integrator(*method, *rel_tol, *abs_tol, *step, *max_steps)?;
                let r = integrate_regularized(p, w0, lambda, *horizon, &spec);
                settle(r, || initial_only(p, w0, lambda, Timescale::Fast))?
            }
        }
        OptimizerSpec::Riemannian { horizon } => {
            let limit = gf_limit(p, w0, cfg.phi_max_time)?;
            let start = ManifoldPoint::new(p, limit.point.clone())?;
            let spec = IntegratorSpec::default().with_record(cfg.record_schedule());
            let r = integrate_riemannian_flow(p, &start, *horizon, &spec, &Retraction::default());
            let fallback = || initial_only(p, &limit.point, 0.0, Timescale::Slow);
            let out = settle(r, fallback)?;
            gf = Some(limit);
            out
        }
    };
    if gf.is_none() {
        gf = match gf_limit(p, w0, cfg.phi_max_time) {
            Ok(g) => Some(g),
            Err(e) => {
                log::warn!("no grokking threshold: {e}");
                None
            }
        };
    }
    let timescale = match trajectory.timescale() {
        Timescale::Fast => Some(timescale_report(
            &trajectory,
            &trajectory,
            lambda,
            gf.as_ref().map(|g| g.threshold),
            cfg.timescale.into(),
        )?),
        Timescale::Slow => None,
    };
    Ok(Execution {
        config: cfg.clone(),
        instance,
        trajectory,
        failure,
        gf_limit: gf,
        timescale,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

impl Execution {
    pub fn final_state(&self) -> &DVector<f64> {
        self.trajectory.final_state().expect("trajectories hold at least one sample")
    }

    pub fn summary(&self) -> Summary {
        let tr = &self.trajectory;
        let last = |name: &str| tr.series(name).and_then(|s| s.last().copied()).unwrap_or(f64::NAN);
        let p = &self.instance.problem;
        let w = self.final_state();
        let kkt = match manifold::kkt_residual(p, w) {
            Ok(k) => Some(k.value),
            Err(e) => {
                log::warn!("kkt residual unavailable: {e}");
                None
            }
        };
        let l1_oracle = self.instance.l1_oracle().and_then(|r| match r {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("l1 oracle failed: {e}");
                None
            }
        });
        Summary {
            samples: tr.len(),
            final_time: tr.final_time().unwrap_or(0.0),
            final_loss: last(grokflow_core::flows::LOSS),
            final_reg_loss: last(grokflow_core::flows::REG_LOSS),
            final_grad_norm: last(grokflow_core::flows::GRAD_NORM),
            final_weight_norm_sq: last(grokflow_core::flows::WEIGHT_NORM_SQ),
            final_test_loss: p.test_loss(w),
            final_kkt_residual: kkt,
            detected_rank: self.instance.detected_rank(w),
            relative_reconstruction_error: self.instance.relative_reconstruction_error(w),
            final_beta_l1: self.instance.beta_l1(w),
            l1_oracle,
            grok_threshold: self.gf_limit.as_ref().map(|g| g.threshold),
            gf_limit_norm_sq: self.gf_limit.as_ref().map(|g| g.point.norm_squared()),
            gf_limit_converged: self.gf_limit.as_ref().map(|g| g.converged),
        }
    }

    /// Snapshot times of the prediction function: `0`, the configured times
    /// and the final time.
    fn snapshot_times(&self) -> Vec<f64> {
        let end = self.trajectory.final_time().unwrap_or(0.0);
        let mut ts = vec![0.0];
        ts.extend(self.config.snapshots.iter().copied().filter(|&t| t <= end));
        ts.push(end);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    fn predictions_csv(&self) -> Option<String> {
        let grid = self.instance.grid.as_ref()?;
        let times = self.snapshot_times();
        let preds: Vec<Vec<f64>> = times
            .iter()
            .filter_map(|&t| self.trajectory.state_at(t))
            .filter_map(|w| self.instance.predict(&w))
            .collect();
        let mut out = String::from("x,teacher");
        for t in &times[..preds.len()] {
            out.push_str(&format!(",t={t:e}"));
        }
        out.push('\n');
        for (i, x) in grid.x.iter().enumerate() {
            out.push_str(&format!("{x:e},{:e}", grid.teacher[i]));
            for p in &preds {
                out.push_str(&format!(",{:e}", p[i]));
            }
            out.push('\n');
        }
        Some(out)
    }

    fn plot_manifest(&self, files: &ReportFiles) -> serde_json::Value {
        let names = self.trajectory.observable_names();
        let has = |n: &str| names.iter().any(|m| m == n);
        let mut losses = vec!["loss"];
        if has("test_loss") {
            losses.push("test_loss");
        }
        let mut plots = vec![
            json!({"title": "losses", "file": files.trajectory, "x": "time", "x_log": true,
                   "y": losses, "y_log": true}),
            json!({"title": "weight norm", "file": files.trajectory, "x": "time", "x_log": true,
                   "y": ["weight_norm_sq"], "y_log": false}),
            json!({"title": "gradient norm", "file": files.trajectory, "x": "time", "x_log": true,
                   "y": ["grad_norm"], "y_log": true}),
        ];
        let svs: Vec<&String> = names.iter().filter(|n| n.starts_with("sv_")).collect();
        if !svs.is_empty() {
            plots.push(json!({"title": "singular values of UV^T", "file": files.trajectory, "x": "time",
                              "x_log": true, "y": svs, "y_log": true}));
        }
        if has("beta_l1") {
            plots.push(json!({"title": "l1 norm of beta", "file": files.trajectory, "x": "time",
                              "x_log": true, "y": ["beta_l1"], "y_log": false}));
        }
        if has(manifold::KKT_RESIDUAL) {
            plots.push(json!({"title": "kkt residual", "file": files.trajectory, "x": "time",
                              "x_log": true, "y": [manifold::KKT_RESIDUAL], "y_log": true}));
        }
        if let Some(pred) = &files.predictions {
            plots.push(json!({"title": "prediction snapshots", "file": pred, "x": "x", "x_log": false,
                              "y": "all columns after x", "y_log": false}));
        }
        json!({
            "format": "grokflow-plot-manifest",
            "version": 1,
            "time_axis": self.trajectory.timescale().as_str(),
            "plots": plots,
        })
    }

    /// Writes every artefact under `dir` and returns the report.
    pub fn write(&self, dir: &Path) -> HarnessResult<RunReport> {
        fs::create_dir_all(dir).at(dir)?;
        let path = |f: &str| dir.join(f);
        let tr_path = path(TRAJECTORY_FILE);
        let f = fs::File::create(&tr_path).at(&tr_path)?;
        self.trajectory.write_csv(BufWriter::new(f)).at(&tr_path)?;
        fs::write(path(CONFIG_FILE), self.config.to_json() + "\n").at(&path(CONFIG_FILE))?;

        let timescale = self.timescale.as_ref().map(TimescaleJson::from);
        if let Some(ts) = &timescale {
            let text = serde_json::to_string_pretty(ts).expect("serialisable") + "\n";
            fs::write(path(TIMESCALE_FILE), text).at(&path(TIMESCALE_FILE))?;
        }
        let predictions = self.predictions_csv();
        if let Some(text) = &predictions {
            fs::write(path(PREDICTIONS_FILE), text).at(&path(PREDICTIONS_FILE))?;
        }
        let data = self.instance.problem.train_data().map(|d| d.to_csv());
        if let Some(text) = &data {
            fs::write(path(DATA_FILE), text).at(&path(DATA_FILE))?;
        }
        if self.config.save_states {
            sidecar::write_sidecar(&self.trajectory, dir, STATES_STEM).at(dir)?;
        }
        let files = ReportFiles {
            trajectory: TRAJECTORY_FILE.into(),
            config: CONFIG_FILE.into(),
            timescale: timescale.as_ref().map(|_| TIMESCALE_FILE.into()),
            plot_manifest: MANIFEST_FILE.into(),
            predictions: predictions.map(|_| PREDICTIONS_FILE.into()),
            data: data.map(|_| DATA_FILE.into()),
            states: self.config.save_states.then(|| format!("{STATES_STEM}.json")),
        };
        let manifest = serde_json::to_string_pretty(&self.plot_manifest(&files)).expect("serialisable") + "\n";
        fs::write(path(MANIFEST_FILE), manifest).at(&path(MANIFEST_FILE))?;

        let mut warnings: Vec<String> = self.trajectory.warnings().to_vec();
        if let Some(g) = &self.gf_limit {
            if !g.converged {
                warnings.push("unregularised limit did not converge within phi_max_time".into());
            }
        }
        if let Some(ts) = &self.timescale {
            warnings.extend(ts.flags.iter().cloned());
        }
        if !self.instance.problem.is_smooth() {
            warnings.push("non-smooth objective: Hessian-based diagnostics ignore the kinks".into());
        }
        let report = RunReport {
            schema_version: crate::config::SCHEMA_VERSION,
            name: self.config.display_name(),
            problem_kind: self.instance.problem.kind().into(),
            dim: self.instance.problem.dim(),
            lambda: self.config.lambda,
            timescale_tag: self.trajectory.timescale().as_str().into(),
            config: self.config.clone(),
            files,
            summary: self.summary(),
            timescale,
            failure: self.failure.clone(),
            warnings,
            wall_clock_seconds: self.wall_clock_seconds,
        };
        let text = serde_json::to_string_pretty(&report).expect("serialisable") + "\n";
        fs::write(path(REPORT_FILE), text).at(&path(REPORT_FILE))?;
        Ok(report)
    }
}

/// Output directory: explicit argument, then the config's, then `runs/<name>`.
pub fn output_dir(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.display_name()))
}

pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> HarnessResult<RunReport> {
    let exec = execute(cfg)?;
    exec.write(out)
}

/// Reads a report back, enforcing the schema of the serde types.
pub fn read_report(dir: &Path) -> HarnessResult<RunReport> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}
