//! Empirical check that long-run statistics forget the initial condition.
//!
//! Two ensembles that differ only in how drivers start are compared on the
//! time average of their ensemble means over a final window. This is a
//! pragmatic mean-level test, not a test of equality in distribution.

use std::fmt;

use super::{run_ensemble, EnsembleConfig, EnsembleStats, Quantity};
use crate::error::{Error, Result};
use crate::feedback_loop::{InitialConditionPolicy, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceEntry {
    pub quantity: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub policies: [InitialConditionPolicy; 2],
    /// Steps `[start, end)` averaged over.
    pub window: (usize, usize),
    pub tolerance: f64,
    pub entries: Vec<ConvergenceEntry>,
    /// Set when the stability hypotheses fail; no ensembles are run then.
    pub precondition_violation: Option<Vec<String>>,
    pub passed: bool,
}

impl ConvergenceReport {
    pub fn max_difference(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.difference.abs()))
    }
}

impl fmt::Display for ConvergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "ergodicity check: {} vs {}, window [{}, {}), tolerance {}",
            self.policies[0], self.policies[1], self.window.0, self.window.1, self.tolerance
        )?;
        if let Some(v) = &self.precondition_violation {
            writeln!(f, "  stability precondition violated; ensembles not run:")?;
            for line in v {
                writeln!(f, "    {line}")?;
            }
        }
        for e in &self.entries {
            let mark = if e.difference.abs() < self.tolerance { "ok" } else { "DIFFERS" };
            writeln!(
                f,
                "  {:<28} {:>12.5} {:>12.5}  diff {:>+10.5}  {mark}",
                e.quantity, e.mean_a, e.mean_b, e.difference
            )?;
        }
        writeln!(
            f,
            "  verdict: {} (mean-level window comparison, not a distributional test)",
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Runs the scenario under both policies with the same seeds and compares
/// late-window means of every tracked quantity. `window` is the number of
/// final steps averaged.
pub fn ergodicity_check(
    scenario: &Scenario,
    config: &EnsembleConfig,
    policies: [InitialConditionPolicy; 2],
    window: usize,
    tolerance: f64,
) -> Result<ConvergenceReport> {
    config.validate()?;
    if window == 0 || window >= config.steps {
        return Err(Error::validation(format!(
            "window must be in 1..{} (steps), got {window}",
            config.steps
        )));
    }
    let range = (config.steps - window, config.steps);
    let unstable = scenario.stability_violations();
    if !unstable.is_empty() {
        return Ok(ConvergenceReport {
            policies,
            window: range,
            tolerance,
            entries: Vec::new(),
            precondition_violation: Some(unstable),
            passed: false,
        });
    }
    let stats: Vec<EnsembleStats> = policies
        .iter()
        .map(|p| run_ensemble(scenario, &config.clone().with_ic_policy(p.clone())))
        .collect::<Result<_>>()?;
    let entries: Vec<ConvergenceEntry> = Quantity::layout(scenario)
        .into_iter()
        .map(|q| {
            let a = stats[0].window_mean(q, range.0..range.1).expect("window within steps");
            let b = stats[1].window_mean(q, range.0..range.1).expect("window within steps");
            ConvergenceEntry {
                quantity: stats[0].name(q),
                mean_a: a,
                mean_b: b,
                difference: a - b,
            }
        })
        .collect();
    let passed = entries.iter().all(|e| e.difference.abs() < tolerance);
    Ok(ConvergenceReport {
        policies,
        window: range,
        tolerance,
        entries,
        precondition_violation: None,
        passed,
    })
}
