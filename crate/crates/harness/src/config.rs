//! Declarative experiment description, parsed from versioned JSON.

use std::path::Path;

use grokflow_core::flows::{IntegratorSpec, RecordSchedule};
use grokflow_core::oracles::TimescaleOptions;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, HarnessResult};

pub const SCHEMA_VERSION: u32 = 1;

/// JSON schema shipped with the crate, mirrored by the serde types below.
pub const CONFIG_SCHEMA: &str = include_str!("../schema/experiment_config.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Paper-scale runs that take minutes rather than seconds.
    #[serde(default)]
    pub long_running: bool,
    pub seed: u64,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub lambda: f64,
    /// Grid used by `sweep` when no `--lambdas` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub record: RecordSpec,
    /// Training times at which 1-D problems save the prediction function.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<f64>,
    /// Dump every recorded state to the binary sidecar.
    #[serde(default)]
    pub save_states: bool,
    #[serde(default)]
    pub timescale: TimescaleSpec,
    /// Overrides the Lipschitz estimate `2·max‖∇²F‖₂` used by sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    /// Flow-time budget for the unregularised limit behind the threshold.
    #[serde(default = "default_phi_max_time")]
    pub phi_max_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

fn default_phi_max_time() -> f64 {
    1e4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        diagonal: Vec<f64>,
    },
    LinearRegression {
        n: usize,
        d: usize,
        /// Explicit design rows; drawn as standard Gaussians when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        design: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        targets: Option<Vec<f64>>,
    },
    MatrixCompletion {
        rows: usize,
        cols: usize,
        true_rank: usize,
        factor_rank: usize,
        #[serde(default = "one")]
        observed_fraction: f64,
    },
    DiagonalNet {
        n: usize,
        #[serde(default)]
        features: FeatureSpec,
        /// Fourier degree `d_f`; the feature dimension is `2 d_f + 1`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        degree: Option<usize>,
        /// Feature dimension for Gaussian features.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        d: Option<usize>,
        #[serde(default = "unit_interval")]
        x_range: [f64; 2],
        #[serde(default = "default_test_points")]
        test_points: usize,
        #[serde(default)]
        loss: LossSpec,
    },
    TwoLayerNet {
        n: usize,
        width: usize,
        #[serde(default = "two_interval")]
        x_range: [f64; 2],
        #[serde(default)]
        activation: ActivationSpec,
        /// `(weight, kink)` pairs of the ReLU teacher.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        teacher: Option<Vec<[f64; 2]>>,
        #[serde(default = "default_test_points")]
        test_points: usize,
    },
}

fn one() -> f64 {
    1.0
}

fn unit_interval() -> [f64; 2] {
    [-1.0, 1.0]
}

fn two_interval() -> [f64; 2] {
    [-2.0, 2.0]
}

fn default_test_points() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpec {
    #[default]
    Fourier,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// `½ Σ r²`
    HalfSum,
    /// `(1/2n) Σ r²`
    #[default]
    HalfMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActivationSpec {
    #[default]
    Relu,
    Softplus {
        beta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Gaussian { variance: f64 },
    Zeros,
    Explicit { values: Vec<f64> },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Gaussian { variance: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    /// Gradient descent; time is `γ·k`.
    Gd { step: f64, iterations: usize },
    /// The regularised gradient flow.
    Flow {
        horizon: f64,
        #[serde(default)]
        method: MethodSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rel_tol: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        abs_tol: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_steps: Option<usize>,
    },
    /// The Riemannian limit flow from `Φ(w0)`, on the slow clock.
    Riemannian { horizon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    #[default]
    Rk45,
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RecordSpec {
    LogSpaced {
        points: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        first: Option<f64>,
    },
    Times {
        times: Vec<f64>,
    },
    Stride {
        every: usize,
    },
}

impl Default for RecordSpec {
    fn default() -> Self {
        RecordSpec::LogSpaced {
            points: 400,
            first: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimescaleSpec {
    pub grad_drop: f64,
    pub separation: f64,
    pub drop_start: f64,
    pub drop_end: f64,
    pub fit_loss_ratio: f64,
}

impl Default for TimescaleSpec {
    fn default() -> Self {
        let o = TimescaleOptions::default();
        Self {
            grad_drop: o.grad_drop,
            separation: o.separation,
            drop_start: o.drop_start,
            drop_end: o.drop_end,
            fit_loss_ratio: o.fit_loss_ratio,
        }
    }
}

impl From<TimescaleSpec> for TimescaleOptions {
    fn from(s: TimescaleSpec) -> Self {
        TimescaleOptions {
            grad_drop: s.grad_drop,
            separation: s.separation,
            drop_start: s.drop_start,
            drop_end: s.drop_end,
            fit_loss_ratio: s.fit_loss_ratio,
        }
    }
}

fn positive(what: &str, x: f64) -> HarnessResult<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("{what} must be positive and finite, got {x}")))
    }
}

fn check_lambda(x: f64) -> HarnessResult<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("lambda must be nonnegative, got {x}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> HarnessResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> HarnessResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        check_lambda(self.lambda)?;
        if let Some(grid) = &self.lambdas {
            grid.iter().try_for_each(|&l| check_lambda(l))?;
        }
        positive("phi_max_time", self.phi_max_time)?;
        if let Some(c) = self.lipschitz {
            positive("lipschitz", c)?;
        }
        let ts = &self.timescale;
        positive("timescale.grad_drop", ts.grad_drop)?;
        positive("timescale.separation", ts.separation)?;
        positive("timescale.fit_loss_ratio", ts.fit_loss_ratio)?;
        if !(0.0 < ts.drop_start && ts.drop_start < ts.drop_end && ts.drop_end < 1.0) {
            return Err(HarnessError::Config(
                "timescale drop fractions must satisfy 0 < drop_start < drop_end < 1".into(),
            ));
        }
        match &self.optimizer {
            OptimizerSpec::Gd { step, .. } => positive("optimizer.step", *step)?,
            OptimizerSpec::Flow {
                horizon,
                rel_tol,
                abs_tol,
                step,
                max_steps,
                method,
            } => {
                if !(horizon.is_finite() && *horizon >= 0.0) {
                    return Err(HarnessError::Config(format!("horizon must be nonnegative, got {horizon}")));
                }
                self.integrator(*method, *rel_tol, *abs_tol, *step, *max_steps)?;
            }
            OptimizerSpec::Riemannian { horizon } => positive("optimizer.horizon", *horizon)?,
        }
        if self.snapshots.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(HarnessError::Config("snapshot times must be nonnegative".into()));
        }
        match &self.record {
            RecordSpec::LogSpaced { points, first } => {
                if *points == 0 {
                    return Err(HarnessError::Config("record.points must be at least 1".into()));
                }
                if let Some(f) = first {
                    positive("record.first", *f)?;
                }
            }
            RecordSpec::Times { times } => {
                if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                    return Err(HarnessError::Config("record times must be nonnegative".into()));
                }
            }
            RecordSpec::Stride { every } => {
                if *every == 0 {
                    return Err(HarnessError::Config("record.every must be at least 1".into()));
                }
            }
        }
        if let InitSpec::Gaussian { variance } = self.init {
            if !(variance.is_finite() && variance >= 0.0) {
                return Err(HarnessError::Config(format!("init variance must be nonnegative, got {variance}")));
            }
        }
        self.validate_problem()
    }

    fn validate_problem(&self) -> HarnessResult<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        match &self.problem {
            ProblemSpec::Quadratic { diagonal } if diagonal.is_empty() => bad("quadratic needs a diagonal".into()),
            ProblemSpec::LinearRegression { n, d, design, targets } => {
                if *n == 0 || *d == 0 {
                    return bad("linear regression needs n, d >= 1".into());
                }
                if design.is_some() != targets.is_some() {
                    return bad("explicit design and targets must be given together".into());
                }
                Ok(())
            }
            ProblemSpec::MatrixCompletion {
                rows,
                cols,
                true_rank,
                factor_rank,
                observed_fraction,
            } => {
                if *rows == 0 || *cols == 0 || *true_rank == 0 || *factor_rank == 0 {
                    return bad("matrix completion sizes must be at least 1".into());
                }
                if *true_rank > (*rows).min(*cols) {
                    return bad("true_rank exceeds the matrix size".into());
                }
                if !(*observed_fraction > 0.0 && *observed_fraction <= 1.0) {
                    return bad(format!("observed_fraction must lie in (0, 1], got {observed_fraction}"));
                }
                Ok(())
            }
            ProblemSpec::DiagonalNet {
                n,
                features,
                degree,
                d,
                x_range,
                ..
            } => {
                if *n == 0 {
                    return bad("diagonal net needs n >= 1".into());
                }
                match features {
                    FeatureSpec::Fourier if degree.is_none() => bad("Fourier features need `degree`".into()),
                    FeatureSpec::Gaussian if d.is_none() => bad("Gaussian features need `d`".into()),
                    _ if x_range[0] >= x_range[1] => bad("x_range must be increasing".into()),
                    _ => Ok(()),
                }
            }
            ProblemSpec::TwoLayerNet {
                n,
                width,
                x_range,
                activation,
                ..
            } => {
                if *n == 0 || *width == 0 {
                    return bad("two-layer net needs n, width >= 1".into());
                }
                if x_range[0] >= x_range[1] {
                    return bad("x_range must be increasing".into());
                }
                if let ActivationSpec::Softplus { beta } = activation {
                    positive("softplus beta", *beta)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn integrator(
        &self,
        method: MethodSpec,
        rel_tol: Option<f64>,
        abs_tol: Option<f64>,
        step: Option<f64>,
        max_steps: Option<usize>,
    ) -> HarnessResult<IntegratorSpec> {
        let base = match method {
            MethodSpec::Rk45 => {
                let d = IntegratorSpec::default();
                let grokflow_core::flows::Method::Rk45 { rel_tol: r, abs_tol: a } = d.method else {
                    unreachable!("default integrator is adaptive")
                };
                IntegratorSpec::rk45(rel_tol.unwrap_or(r), abs_tol.unwrap_or(a))
            }
            MethodSpec::Rk4 | MethodSpec::Euler => {
                let h = step.ok_or_else(|| HarnessError::Config("fixed-step methods need `step`".into()))?;
                if method == MethodSpec::Rk4 {
                    IntegratorSpec::rk4(h)
                } else {
                    IntegratorSpec::euler(h)
                }
            }
        };
        let mut spec = base.with_record(self.record_schedule());
        if let Some(m) = max_steps {
            spec = spec.with_max_steps(m);
        }
        spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(spec)
    }

    /// Record schedule with the snapshot times merged in.
    pub fn record_schedule(&self) -> RecordSchedule {
        let base = match &self.record {
            RecordSpec::LogSpaced { points, first } => RecordSchedule::LogSpaced {
                points: *points,
                first: *first,
            },
            RecordSpec::Times { times } => RecordSchedule::Times(times.clone()),
            RecordSpec::Stride { every } => RecordSchedule::Stride(*every),
        };
        if self.snapshots.is_empty() {
            return base;
        }
        let horizon = self.horizon();
        match base.times(horizon) {
            Some(mut ts) => {
                ts.extend(self.snapshots.iter().copied().filter(|&t| t <= horizon));
                ts.sort_by(f64::total_cmp);
                ts.dedup();
                RecordSchedule::Times(ts)
            }
            None => base,
        }
    }

    /// Fast-clock horizon (slow clock for Riemannian runs).
    pub fn horizon(&self) -> f64 {
        match &self.optimizer {
            OptimizerSpec::Gd { step, iterations } => step * *iterations as f64,
            OptimizerSpec::Flow { horizon, .. } | OptimizerSpec::Riemannian { horizon } => *horizon,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            lambdas: None,
            ..self.clone()
        }
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.problem.kind().to_string())
    }
}

impl ProblemSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSpec::Quadratic { .. } => "quadratic",
            ProblemSpec::LinearRegression { .. } => "linear_regression",
            ProblemSpec::MatrixCompletion { .. } => "matrix_completion",
            ProblemSpec::DiagonalNet { .. } => "diagonal_net",
            ProblemSpec::TwoLayerNet { .. } => "two_layer_net",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "seed": 3,
        "problem": {"kind": "linear_regression", "n": 3, "d": 6},
        "lambda": 0.01,
        "optimizer": {"kind": "flow", "horizon": 10.0}
    }"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.init, InitSpec::Gaussian { variance: 1.0 });
        assert_eq!(cfg.record, RecordSpec::default());
        assert_eq!(cfg.horizon(), 10.0);
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_fields() {
        let top = MINIMAL.replace("\"seed\": 3,", "\"seed\": 3, \"colour\": 1,");
        assert!(ExperimentConfig::from_json(&top).is_err());
        let nested = MINIMAL.replace("\"d\": 6}", "\"d\": 6, \"noise\": 0.1}");
        assert!(ExperimentConfig::from_json(&nested).is_err());
        let opt = MINIMAL.replace("\"horizon\": 10.0}", "\"horizon\": 10.0, \"tol\": 1}");
        assert!(ExperimentConfig::from_json(&opt).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_json(&MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2")).is_err());
        assert!(ExperimentConfig::from_json(&MINIMAL.replace("0.01", "-0.01")).is_err());
        let rk4 = MINIMAL.replace("\"horizon\": 10.0}", "\"horizon\": 10.0, \"method\": \"rk4\"}");
        assert!(ExperimentConfig::from_json(&rk4).is_err());
    }

    #[test]
    fn snapshots_join_the_record_schedule() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.snapshots = vec![2.5, 50.0];
        let RecordSchedule::Times(ts) = cfg.record_schedule() else {
            panic!("expected explicit times")
        };
        assert!(ts.contains(&2.5));
        assert!(!ts.contains(&50.0));
    }

    #[test]
    fn schema_lists_every_top_level_field() {
        let schema: serde_json::Value = serde_json::from_str(CONFIG_SCHEMA).unwrap();
        let props = schema["properties"].as_object().unwrap();
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut full = cfg.clone();
        full.name = Some("x".into());
        full.lambdas = Some(vec![0.1, 0.2]);
        full.snapshots = vec![1.0];
        full.lipschitz = Some(1.0);
        full.output_dir = Some("out".into());
        let v = serde_json::to_value(&full).unwrap();
        for key in v.as_object().unwrap().keys() {
            assert!(props.contains_key(key), "schema lacks {key}");
        }
        assert_eq!(schema["additionalProperties"], serde_json::Value::Bool(false));
    }
}
