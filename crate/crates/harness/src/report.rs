//! Serialised run artefacts.

use grokflow_core::oracles::TimescaleReport;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const REPORT_SCHEMA: &str = include_str!("../schema/run_report.schema.json");

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const TIMESCALE_FILE: &str = "timescale.json";
pub const MANIFEST_FILE: &str = "plot_manifest.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const DATA_FILE: &str = "data.csv";
pub const STATES_STEM: &str = "states";
pub const ANALYSIS_FILE: &str = "analysis.json";

/// Timescale extraction in its published JSON shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimescaleJson {
    pub t_gf: Option<f64>,
    pub t_wd: Option<f64>,
    pub plateau_log_span: Option<f64>,
    pub drop_log_span: Option<f64>,
    pub grokking_expected: bool,
    pub lambda: f64,
    pub threshold: Option<f64>,
    pub drop_start: Option<f64>,
    pub drop_end: Option<f64>,
    pub signature: bool,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl From<&TimescaleReport> for TimescaleJson {
    fn from(r: &TimescaleReport) -> Self {
        Self {
            t_gf: r.t_gf,
            t_wd: r.t_wd,
            plateau_log_span: r.plateau_log_span,
            drop_log_span: r.drop_log_span,
            grokking_expected: r.grokking_expected,
            lambda: r.lambda,
            threshold: r.threshold,
            drop_start: r.drop_start,
            drop_end: r.drop_end,
            signature: r.signature,
            flags: r.flags.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFiles {
    pub trajectory: String,
    pub config: String,
    pub timescale: Option<String>,
    pub plot_manifest: String,
    pub predictions: Option<String>,
    pub data: Option<String>,
    pub states: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub samples: usize,
    pub final_time: f64,
    pub final_loss: f64,
    pub final_reg_loss: f64,
    pub final_grad_norm: f64,
    pub final_weight_norm_sq: f64,
    pub final_test_loss: Option<f64>,
    pub final_kkt_residual: Option<f64>,
    /// Singular values of `UVᵀ` above `1e-3·σ₁(M*)`.
    pub detected_rank: Option<usize>,
    /// `‖M* − UVᵀ‖_F / ‖M*‖_F`.
    pub relative_reconstruction_error: Option<f64>,
    pub final_beta_l1: Option<f64>,
    pub l1_oracle: Option<f64>,
    /// `‖∇F(w0)‖ / ‖Φ(w0)‖`.
    pub grok_threshold: Option<f64>,
    pub gf_limit_norm_sq: Option<f64>,
    pub gf_limit_converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub name: String,
    pub problem_kind: String,
    pub dim: usize,
    pub lambda: f64,
    pub timescale_tag: String,
    pub config: ExperimentConfig,
    pub files: ReportFiles,
    pub summary: Summary,
    pub timescale: Option<TimescaleJson>,
    /// Integration failure; the outputs hold the samples recorded before it.
    pub failure: Option<String>,
    pub warnings: Vec<String>,
    pub wall_clock_seconds: f64,
}
