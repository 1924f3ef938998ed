//! Figure recipes shipped with the crate (also available as files under `recipes/`).

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, HarnessResult};

pub const RECIPES: &[(&str, &str)] = &[
    ("fig2_matrix_completion", include_str!("../recipes/fig2_matrix_completion.json")),
    ("fig2_matrix_completion_ci", include_str!("../recipes/fig2_matrix_completion_ci.json")),
    ("fig3_relu", include_str!("../recipes/fig3_relu.json")),
    ("fig3_relu_ci", include_str!("../recipes/fig3_relu_ci.json")),
    ("fig4_diagonal", include_str!("../recipes/fig4_diagonal.json")),
    ("fig4_diagonal_ci", include_str!("../recipes/fig4_diagonal_ci.json")),
    ("fig_linreg", include_str!("../recipes/fig_linreg.json")),
    ("fig_linreg_ci", include_str!("../recipes/fig_linreg_ci.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    RECIPES.iter().map(|(n, _)| *n)
}

pub fn recipe(name: &str) -> HarnessResult<ExperimentConfig> {
    let (_, text) = RECIPES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| HarnessError::Input(format!("unknown recipe '{name}'")))?;
    ExperimentConfig::from_json(text)
}
