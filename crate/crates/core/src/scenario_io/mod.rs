//! Scenario files, the bundled reference scenario, output bundles and the
//! command line.

mod cli;
mod format;
mod output;
mod paper;
mod svg;

pub use cli::{cli, OUT_DIR_ENV};
pub use format::{
    parse_scenario, parse_scenario_document, to_toml, to_toml_with_settings, RunSettings, ScenarioDocument,
};
pub use output::{emit, fmt_f64, read_csv, EmitOptions, OutputBundle, Outputs, MANIFEST_FILE, SEED_RULE};
pub use paper::{paper_scenario, PAPER_RUNS, PAPER_SCENARIO_TOML, PAPER_SEED, PAPER_STEPS};
