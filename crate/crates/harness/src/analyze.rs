//! Post-hoc timescale and grokking annotation of a finished run directory.

use std::fs;
use std::path::Path;

use grokflow_core::flows::{GRAD_NORM, LOSS, WEIGHT_NORM_SQ};
use grokflow_core::oracles::{timescale_report_from_series, RunSeries};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, OptimizerSpec};
use crate::error::{HarnessError, HarnessResult, IoContext};
use crate::instance::Instance;
use crate::report::{TimescaleJson, ANALYSIS_FILE, CONFIG_FILE, TRAJECTORY_FILE};
use crate::run::gf_limit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Analysis {
    pub timescale: TimescaleJson,
    /// Train loss fitted before `‖w‖²` starts its main descent.
    pub signature: bool,
    pub gf_limit_norm_sq: f64,
    pub final_weight_norm_sq: f64,
    /// `1 − ‖w(T)‖² / ‖Φ(w0)‖²`: how much norm the second phase removed.
    pub relative_norm_drop: f64,
}

/// Columns of a trajectory CSV keyed by header name.
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> HarnessResult<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| HarnessError::Input("empty trajectory file".into()))?;
        let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != names.len() {
                return Err(HarnessError::Input(format!(
                    "trajectory row {} has {} cells, header has {}",
                    row + 1,
                    cells.len(),
                    names.len()
                )));
            }
            for (c, cell) in columns.iter_mut().zip(cells) {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| HarnessError::Input(format!("unparsable value '{cell}' in row {}", row + 1)))?;
                c.push(v);
            }
        }
        Ok(Self { names, columns })
    }

    pub fn column(&self, name: &str) -> HarnessResult<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| HarnessError::Input(format!("trajectory lacks column '{name}'")))
    }
}

pub fn cmd_analyze(dir: &Path) -> HarnessResult<Analysis> {
    if !dir.is_dir() {
        return Err(HarnessError::Input(format!("{} is not a run directory", dir.display())));
    }
    let cfg_path = dir.join(CONFIG_FILE);
    let tr_path = dir.join(TRAJECTORY_FILE);
    for p in [&cfg_path, &tr_path] {
        if !p.is_file() {
            return Err(HarnessError::Input(format!("missing run artefact {}", p.display())));
        }
    }
    let cfg = ExperimentConfig::load(&cfg_path).map_err(|e| HarnessError::Input(e.to_string()))?;
    let table = Table::parse(&fs::read_to_string(&tr_path).at(&tr_path)?)?;
    let series = RunSeries {
        times: table.column("time")?.to_vec(),
        loss: table.column(LOSS)?.to_vec(),
        grad_norm: table.column(GRAD_NORM)?.to_vec(),
        weight_norm_sq: table.column(WEIGHT_NORM_SQ)?.to_vec(),
    };
    // the limit flow carries no weight-decay phase of its own
    let effective_lambda = match cfg.optimizer {
        OptimizerSpec::Riemannian { .. } => 0.0,
        _ => cfg.lambda,
    };
    let inst = Instance::build(&cfg)?;
    let limit = gf_limit(&inst.problem, &inst.w0, cfg.phi_max_time)?;
    let report = timescale_report_from_series(
        &series,
        &series,
        effective_lambda,
        Some(limit.threshold),
        cfg.timescale.into(),
    )?;
    let gf_norm_sq = limit.point.norm_squared();
    let final_norm_sq = *series.weight_norm_sq.last().expect("nonempty");
    let analysis = Analysis {
        signature: report.signature,
        timescale: TimescaleJson::from(&report),
        gf_limit_norm_sq: gf_norm_sq,
        final_weight_norm_sq: final_norm_sq,
        relative_norm_drop: if gf_norm_sq > 0.0 {
            1.0 - final_norm_sq / gf_norm_sq
        } else {
            0.0
        },
    };
    let out = dir.join(ANALYSIS_FILE);
    fs::write(&out, serde_json::to_string_pretty(&analysis).expect("serialisable") + "\n").at(&out)?;
    Ok(analysis)
}
