//! Synthetic study scenarios, model-grid evaluation and parameter recovery.

pub mod evaluate;
pub mod scenario;
pub mod synthetic;

pub use evaluate::{
    all_combos, combo_label, predict_latent, recovery_report, rmspe, run_model_grid, write_grid_csv, write_recovery_csv,
    ComboResult, EvaluationReport, ParamRecovery,
};
pub use scenario::{
    fitted_structure, generate_scenario, generate_scenario_one, generate_scenario_two, scenario_model, ScenarioConfig, ScenarioData,
    ScenarioKind, ScenarioTruth, TrueParam,
};

#[cfg(test)]
mod tests;
