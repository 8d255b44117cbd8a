//! The bundled two-suburb, two-class reference scenario.

use crate::choice_model::{DriverProfile, LocationUtilityParams};
use crate::feedback_loop::Scenario;
use crate::lti_blocks::{BlockSpec, ControllerBank, FilterBank};

pub const PAPER_SCENARIO_TOML: &str = include_str!("../../scenarios/paper.toml");

pub const PAPER_RUNS: usize = 1000;
pub const PAPER_STEPS: usize = 1000;
pub const PAPER_SEED: u64 = 42;

fn profile(name: &str, population: usize, suburb_bases: [f64; 2], city_base: f64) -> DriverProfile {
    let suburbs = suburb_bases
        .iter()
        .map(|&b| LocationUtilityParams::suburb(10.0, b))
        .collect();
    DriverProfile::new(name, suburbs, LocationUtilityParams::city(35.0, city_base), population)
        .expect("reference profile is valid")
}

/// References (25, 35); class 1 (20 drivers) and class 2 (80 drivers); lag
/// controllers (α, β, κ) = (−0.01, 0.9, 0.15) and (−0.01, 0.99, 0.2); unit
/// delay filters.
pub fn paper_scenario() -> Scenario {
    let profiles = vec![
        profile("class1", 20, [-62.28, -66.0], -53.12),
        profile("class2", 80, [-51.5, -61.0], -35.0),
    ];
    let controllers = ControllerBank::new(vec![
        BlockSpec::lag(-0.01, 0.9, 0.15),
        BlockSpec::lag(-0.01, 0.99, 0.2),
    ])
    .expect("reference controllers are valid");
    Scenario::new(vec![25.0, 35.0], profiles, controllers, FilterBank::unit_delays(2))
        .expect("reference scenario is valid")
}
