//! Scenario files.
//!
//! Scenarios are TOML documents with five sections:
//!
//! ```toml
//! [references]
//! suburbs = [25.0, 35.0]            # r_j, one per suburb
//!
//! [profiles.class1]                 # one table per driver class, in order
//! population = 20
//! incentive_weights = [10.0, 10.0]  # γ_j0
//! suburb_bases = [-62.28, -66.0]    # Σγ·X per suburb, or itemised attributes
//! city_bias = 35.0
//! city_base = -53.12
//!
//! [controllers.suburb_1]            # one table per suburb, in channel order
//! type = "lag"                      # lag | constant | state_space
//! alpha = -0.01
//! beta = 0.9
//! kappa = 0.15
//!
//! [filters.suburb_1]                # delay | moving_average | state_space
//! type = "delay"
//! steps = 1
//!
//! [ensemble]                        # optional
//! runs = 1000
//! steps = 1000
//! seed = 42
//! ic_policy = "random-simplex"      # all-city | all-suburb-J | { fixed = [[…]] }
//! decimation = 1
//! ```
//!
//! A base may be itemised instead of a number, e.g.
//! `city_base = [{ label = "travel-time", weight = -0.8, value = 40.0 }]`; it
//! is collapsed to `Σ weight·value` on load. Unknown keys are rejected.
//! Only `ic_policy` (random-simplex) and `decimation` (1) have defaults.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::choice_model::{AttributeBundle, AttributeEntry, DriverProfile, LocationUtilityParams};
use crate::error::{Error, Result};
use crate::feedback_loop::{InitialConditionPolicy, Scenario};
use crate::lti_blocks::{BlockSpec, ControllerBank, FilterBank};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    references: Option<ReferencesSection>,
    #[serde(default)]
    profiles: IndexMap<String, ProfileSection>,
    #[serde(default)]
    controllers: IndexMap<String, BlockSpec>,
    #[serde(default)]
    filters: IndexMap<String, BlockSpec>,
    ensemble: Option<EnsembleSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferencesSection {
    suburbs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileSection {
    population: usize,
    incentive_weights: Vec<f64>,
    suburb_bases: Vec<BaseSpec>,
    city_bias: f64,
    city_base: BaseSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum BaseSpec {
    Value(f64),
    Attributes(Vec<AttributeEntry>),
}

impl BaseSpec {
    fn collapse(&self) -> f64 {
        match self {
            BaseSpec::Value(v) => *v,
            BaseSpec::Attributes(entries) => AttributeBundle::from(entries.clone()).base_utility(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    ic_policy: Option<PolicySpec>,
    decimation: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PolicySpec {
    Named(String),
    Fixed(FixedPolicy),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedPolicy {
    fixed: Vec<Vec<f64>>,
}

/// Run settings a scenario file may carry in its `[ensemble]` section.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSettings {
    pub runs: Option<usize>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDocument {
    pub scenario: Scenario,
    pub run: RunSettings,
}

/// Parses and fully validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    parse_scenario_document(text).map(|d| d.scenario)
}

pub fn parse_scenario_document(text: &str) -> Result<ScenarioDocument> {
    let doc: Document = toml::from_str(text).map_err(|e| Error::Syntax(e.to_string()))?;
    let mut errors = Vec::new();

    let references = match &doc.references {
        Some(r) => r.suburbs.clone(),
        None => {
            errors.push("missing section [references]".to_string());
            Vec::new()
        }
    };
    let m = references.len();
    if doc.profiles.is_empty() {
        errors.push("missing section [profiles.*]: at least one profile is required".into());
    }
    if doc.controllers.is_empty() {
        errors.push("missing section [controllers.*]".into());
    }
    if doc.filters.is_empty() {
        errors.push("missing section [filters.*]".into());
    }

    let mut profiles = Vec::new();
    for (name, p) in &doc.profiles {
        let at = format!("[profiles.{name}]");
        if p.incentive_weights.len() != m {
            errors.push(format!(
                "{at} incentive_weights: {} entries, expected {m} (one per reference)",
                p.incentive_weights.len()
            ));
        }
        if p.suburb_bases.len() != p.incentive_weights.len() {
            errors.push(format!(
                "{at} suburb_bases: {} entries, expected {} to match incentive_weights",
                p.suburb_bases.len(),
                p.incentive_weights.len()
            ));
            continue;
        }
        let suburbs = p
            .incentive_weights
            .iter()
            .zip(&p.suburb_bases)
            .map(|(w, b)| LocationUtilityParams::suburb(*w, b.collapse()))
            .collect();
        let city = LocationUtilityParams::city(p.city_bias, p.city_base.collapse());
        match DriverProfile::new(name.clone(), suburbs, city, p.population) {
            Ok(profile) => profiles.push(profile),
            Err(e) => errors.push(format!("{at} {e}")),
        }
    }

    let controllers = ControllerBank::new(doc.controllers.values().cloned().collect())
        .map_err(|e| errors.push(format!("[controllers] {e}")))
        .ok();
    let filters = FilterBank::new(doc.filters.values().cloned().collect())
        .map_err(|e| errors.push(format!("[filters] {e}")))
        .ok();

    let section = doc.ensemble.clone().unwrap_or_default();
    let policy = match &section.ic_policy {
        None => Some(InitialConditionPolicy::RandomSimplex),
        Some(PolicySpec::Named(name)) => name
            .parse()
            .map_err(|e| errors.push(format!("[ensemble] ic_policy: {e}")))
            .ok(),
        Some(PolicySpec::Fixed(f)) => Some(InitialConditionPolicy::Fixed(f.fixed.clone())),
    };
    if section.runs == Some(0) {
        errors.push("[ensemble] runs: must be at least 1".into());
    }
    if section.steps == Some(0) {
        errors.push("[ensemble] steps: must be at least 1".into());
    }

    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    let (Some(controllers), Some(filters), Some(policy)) = (controllers, filters, policy) else {
        unreachable!("errors were recorded for every missing part");
    };
    let scenario = Scenario::new(references, profiles, controllers, filters)
        .and_then(|s| s.with_ic_policy(policy))
        .and_then(|s| s.with_decimation(section.decimation.unwrap_or(1)))
        .map_err(|e| match e {
            Error::Validation(v) => Error::Validation(v.into_iter().map(|s| format!("scenario: {s}")).collect()),
            other => other,
        })?;
    Ok(ScenarioDocument {
        scenario,
        run: RunSettings {
            runs: section.runs,
            steps: section.steps,
            seed: section.seed,
        },
    })
}

fn to_document(scenario: &Scenario, run: RunSettings) -> Document {
    let profiles = scenario
        .profiles()
        .iter()
        .map(|p| {
            (
                p.name().to_string(),
                ProfileSection {
                    population: p.population(),
                    incentive_weights: p.suburb_params().iter().map(|s| s.incentive_weight).collect(),
                    suburb_bases: p.suburb_params().iter().map(|s| BaseSpec::Value(s.base)).collect(),
                    city_bias: p.city_params().city_bias,
                    city_base: BaseSpec::Value(p.city_params().base),
                },
            )
        })
        .collect();
    let channels = |specs: &[BlockSpec]| {
        specs
            .iter()
            .enumerate()
            .map(|(j, s)| (format!("suburb_{}", j + 1), s.clone()))
            .collect()
    };
    let ic_policy = match scenario.ic_policy() {
        InitialConditionPolicy::Fixed(v) => PolicySpec::Fixed(FixedPolicy { fixed: v.clone() }),
        named => PolicySpec::Named(named.to_string()),
    };
    Document {
        references: Some(ReferencesSection {
            suburbs: scenario.references().to_vec(),
        }),
        profiles,
        controllers: channels(scenario.controllers().specs()),
        filters: channels(scenario.filters().specs()),
        ensemble: Some(EnsembleSection {
            runs: run.runs,
            steps: run.steps,
            seed: run.seed,
            ic_policy: Some(ic_policy),
            decimation: Some(scenario.decimation()),
        }),
    }
}

/// Canonical text of a scenario; `parse_scenario(&to_toml(s)) == s`.
pub fn to_toml(scenario: &Scenario) -> String {
    to_toml_with_settings(scenario, RunSettings::default())
}

pub fn to_toml_with_settings(scenario: &Scenario, run: RunSettings) -> String {
    toml::to_string(&to_document(scenario, run)).expect("scenario documents always serialise")
}

impl Scenario {
    /// SHA-256 of the canonical text, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(to_toml(self).as_bytes()))
    }
}
