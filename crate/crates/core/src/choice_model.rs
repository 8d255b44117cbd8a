//! Multinomial logit model of parking-location choice.
//!
//! Locations are indexed `0..M` for the suburbs and `M` for the City. A
//! driver's utility for suburb `j` is `γ_j0·π_j + Σ_k γ_jk·X_jk`; the City
//! utility is `bias + Σ_k γ_Ck·X_Ck` and never depends on the incentives.
//! Probabilities are the softmax of the `M + 1` utilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` accepted when validating a probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;

/// The attribute labels used by the park-and-charge/-ride use case.
pub const PARK_AND_RIDE_LABELS: [&str; 6] = [
    "travel-time",
    "parking-fee",
    "charge-fee",
    "bus-ticket",
    "bus-frequency",
    "ev-charger-count",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeEntry {
    pub label: String,
    pub weight: f64,
    pub value: f64,
}

/// Itemised attributes `X_k` of one location together with the weights
/// `γ_k` a driver class puts on them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributeBundle {
    entries: Vec<AttributeEntry>,
}

impl AttributeBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, label: impl Into<String>, weight: f64, value: f64) -> Self {
        self.entries.push(AttributeEntry {
            label: label.into(),
            weight,
            value,
        });
        self
    }

    pub fn entries(&self) -> &[AttributeEntry] {
        &self.entries
    }

    /// `Σ_k γ_k·X_k`, zero for an empty bundle.
    pub fn base_utility(&self) -> f64 {
        self.entries.iter().map(|e| e.weight * e.value).sum()
    }
}

impl From<Vec<AttributeEntry>> for AttributeBundle {
    fn from(entries: Vec<AttributeEntry>) -> Self {
        Self { entries }
    }
}

/// Utility parameters of one location for one driver class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationUtilityParams {
    /// Sensitivity to the incentive offered at this location. Zero for the City.
    pub incentive_weight: f64,
    /// Collapsed attribute term `Σ γ·X`.
    pub base: f64,
    /// Inherent preference for the City. Zero for suburbs.
    pub city_bias: f64,
}

impl LocationUtilityParams {
    pub fn suburb(incentive_weight: f64, base: f64) -> Self {
        Self {
            incentive_weight,
            base,
            city_bias: 0.0,
        }
    }

    pub fn suburb_from_attributes(incentive_weight: f64, attributes: &AttributeBundle) -> Self {
        Self::suburb(incentive_weight, attributes.base_utility())
    }

    pub fn city(bias: f64, base: f64) -> Self {
        Self {
            incentive_weight: 0.0,
            base,
            city_bias: bias,
        }
    }

    pub fn city_from_attributes(bias: f64, attributes: &AttributeBundle) -> Self {
        Self::city(bias, attributes.base_utility())
    }
}

/// One class of drivers sharing the same utility parameters. Every driver in
/// the class decides independently.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverProfile {
    name: String,
    suburbs: Vec<LocationUtilityParams>,
    city: LocationUtilityParams,
    population: usize,
}

impl DriverProfile {
    pub fn new(
        name: impl Into<String>,
        suburbs: Vec<LocationUtilityParams>,
        city: LocationUtilityParams,
        population: usize,
    ) -> Result<Self> {
        let name = name.into();
        let mut violations = Vec::new();
        if suburbs.is_empty() {
            violations.push(format!("profile `{name}`: at least one suburb is required"));
        }
        if population == 0 {
            violations.push(format!("profile `{name}`: population must be at least 1"));
        }
        for (j, s) in suburbs.iter().enumerate() {
            if s.city_bias != 0.0 {
                violations.push(format!(
                    "profile `{name}`: suburb {} carries a city bias",
                    j + 1
                ));
            }
            if !(s.incentive_weight.is_finite() && s.base.is_finite()) {
                violations.push(format!(
                    "profile `{name}`: suburb {} has non-finite parameters",
                    j + 1
                ));
            }
        }
        if city.incentive_weight != 0.0 {
            violations.push(format!(
                "profile `{name}`: the City cannot have an incentive weight"
            ));
        }
        if !(city.city_bias.is_finite() && city.base.is_finite()) {
            violations.push(format!("profile `{name}`: City has non-finite parameters"));
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(Self {
            name,
            suburbs,
            city,
            population,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn suburb_params(&self) -> &[LocationUtilityParams] {
        &self.suburbs
    }

    pub fn city_params(&self) -> &LocationUtilityParams {
        &self.city
    }

    pub fn population(&self) -> usize {
        self.population
    }

    /// Number of suburbs `M`.
    pub fn suburb_count(&self) -> usize {
        self.suburbs.len()
    }

    /// Utility of `location` (`M` is the City) at the given incentive. The
    /// incentive is ignored for the City.
    pub fn utility(&self, location: usize, incentive: f64) -> Result<f64> {
        let m = self.suburbs.len();
        match location {
            j if j < m => {
                let p = &self.suburbs[j];
                Ok(p.incentive_weight * incentive + p.base)
            }
            j if j == m => Ok(self.city.city_bias + self.city.base),
            j => Err(Error::Domain(format!(
                "location {j} out of range for a profile with {m} suburbs (valid 0..={m})"
            ))),
        }
    }

    /// The `M + 1` utilities in (Suburb 1, …, Suburb M, City) order.
    pub fn utilities(&self, incentives: &[f64]) -> Result<Vec<f64>> {
        let m = self.suburbs.len();
        if incentives.len() != m {
            return Err(Error::Domain(format!(
                "expected {m} incentives, got {}",
                incentives.len()
            )));
        }
        let mut u = Vec::with_capacity(m + 1);
        for (j, &pi) in incentives.iter().enumerate() {
            u.push(self.utility(j, pi)?);
        }
        u.push(self.utility(m, 0.0)?);
        Ok(u)
    }

    pub fn choice_probabilities(&self, incentives: &[f64]) -> Result<ChoiceProbabilities> {
        let u = self.utilities(incentives)?;
        softmax(&u).map(ChoiceProbabilities)
    }

    /// Natural logarithms of the choice probabilities, accurate even where a
    /// probability rounds to 0 or 1.
    pub fn log_choice_probabilities(&self, incentives: &[f64]) -> Result<Vec<f64>> {
        log_softmax(&self.utilities(incentives)?)
    }
}

fn check_finite(utilities: &[f64]) -> Result<f64> {
    let mut max = f64::NEG_INFINITY;
    for (i, &u) in utilities.iter().enumerate() {
        if !u.is_finite() {
            return Err(Error::Numeric(format!(
                "utility of location {i} is not finite ({u})"
            )));
        }
        max = max.max(u);
    }
    if utilities.is_empty() {
        return Err(Error::Domain("softmax of an empty utility vector".into()));
    }
    Ok(max)
}

/// Softmax with max-subtraction.
pub fn softmax(utilities: &[f64]) -> Result<Vec<f64>> {
    let max = check_finite(utilities)?;
    let mut p: Vec<f64> = utilities.iter().map(|&u| (u - max).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    Ok(p)
}

pub fn log_softmax(utilities: &[f64]) -> Result<Vec<f64>> {
    let max = check_finite(utilities)?;
    let argmax = utilities
        .iter()
        .position(|&u| u == max)
        .expect("maximum is attained");
    // ln Σ e^(u - max) = ln(1 + rest), where rest excludes the leading term
    let rest: f64 = utilities
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != argmax)
        .map(|(_, &u)| (u - max).exp())
        .sum();
    let offset = rest.ln_1p();
    Ok(utilities.iter().map(|&u| (u - max) - offset).collect())
}

/// Probability vector over (Suburb 1, …, Suburb M, City).
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceProbabilities(Vec<f64>);

impl ChoiceProbabilities {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::Domain(
                "a choice set needs at least one suburb and the City".into(),
            ));
        }
        if let Some((i, v)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!("probability {i} = {v} outside [0, 1]")));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(Error::Domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn suburb_count(&self) -> usize {
        self.0.len() - 1
    }

    pub fn suburb(&self, j: usize) -> f64 {
        self.0[j]
    }

    pub fn city(&self) -> f64 {
        self.0[self.0.len() - 1]
    }
}

/// The location a driver picked: `0..M` for suburbs, `M` for the City.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChoiceOutcome(usize);

impl ChoiceOutcome {
    pub fn new(location_index: usize) -> Self {
        Self(location_index)
    }

    pub fn location_index(self) -> usize {
        self.0
    }

    pub fn is_city(self, suburbs: usize) -> bool {
        self.0 == suburbs
    }
}

/// Inverse-CDF draw over the fixed (Suburb 1, …, City) ordering. Consumes
/// exactly one `f64` from `rng`.
pub fn sample_choice<R: Rng + ?Sized>(probs: &ChoiceProbabilities, rng: &mut R) -> ChoiceOutcome {
    sample_index(probs.as_slice(), rng)
}

pub(crate) fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> ChoiceOutcome {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        cumulative += pi;
        if u < cumulative {
            return ChoiceOutcome(i);
        }
    }
    // round-off left u above the last partial sum
    let last = p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1);
    ChoiceOutcome(last)
}

/// `y = Σ_i y^i`: the number of drivers at each of the `suburbs + 1`
/// locations.
///
/// Panics if an outcome refers to a location beyond the City.
pub fn aggregate_counts(outcomes: &[ChoiceOutcome], suburbs: usize) -> Vec<u64> {
    let mut counts = vec![0u64; suburbs + 1];
    for o in outcomes {
        counts[o.0] += 1;
    }
    counts
}
