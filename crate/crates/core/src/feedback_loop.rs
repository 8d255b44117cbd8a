//! One seeded run of the closed loop.
//!
//! Per step `k`:
//!
//! 1. `ŷ[k]` is read from the filter state,
//! 2. `e[k] = r − ŷ[k]`,
//! 3. the controllers produce `π[k]` (with feedthrough) and update,
//! 4. every driver reports its current location `y^i[k] = x^i[k]` and then
//!    re-decides `x^i[k+1]` from the logit probabilities at `π[k]`,
//! 5. `y[k] = Σ_i y^i[k]`,
//! 6. the filters advance on the suburb entries of `y[k]`.
//!
//! Drivers are visited in profile order, then by index within the profile,
//! and each re-decision consumes exactly one uniform from the run's stream.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::choice_model::{sample_index, ChoiceOutcome, DriverProfile, PROBABILITY_SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::lti_blocks::{ControllerBank, FilterBank};

/// Random stream for run `stream` of an experiment seeded with `seed`.
///
/// ChaCha8 keyed by `seed` (expanded through `seed_from_u64`) with the run
/// index as the ChaCha stream id, so every run gets an independent,
/// platform-independent sequence and run 0 equals a plain single run.
pub fn run_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// How each profile's initial location distribution is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialConditionPolicy {
    /// A fresh probability vector per profile, uniform on the simplex.
    RandomSimplex,
    AllCity,
    /// Every driver starts in suburb `j` (zero-based).
    AllSuburb(usize),
    /// Explicit probability vectors: one shared by all profiles, or one per
    /// profile.
    Fixed(Vec<Vec<f64>>),
}

impl InitialConditionPolicy {
    fn probabilities<R: Rng + ?Sized>(&self, profile: usize, m: usize, rng: &mut R) -> Vec<f64> {
        match self {
            InitialConditionPolicy::RandomSimplex => {
                // normalised Exp(1) variates are Dirichlet(1, …, 1)
                let draws: Vec<f64> = (0..=m)
                    .map(|_| -(1.0 - rng.random::<f64>()).ln())
                    .collect();
                let total: f64 = draws.iter().sum();
                draws.into_iter().map(|d| d / total).collect()
            }
            InitialConditionPolicy::AllCity => one_hot(m, m),
            InitialConditionPolicy::AllSuburb(j) => one_hot(*j, m),
            InitialConditionPolicy::Fixed(vectors) => {
                if vectors.len() == 1 {
                    vectors[0].clone()
                } else {
                    vectors[profile].clone()
                }
            }
        }
    }

    fn violations(&self, m: usize, profiles: usize) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            InitialConditionPolicy::AllSuburb(j) if *j >= m => out.push(format!(
                "initial condition: suburb {} does not exist (M = {m})",
                j + 1
            )),
            InitialConditionPolicy::Fixed(vectors) => {
                if vectors.len() != 1 && vectors.len() != profiles {
                    out.push(format!(
                        "initial condition: {} fixed vectors given, expected 1 or {profiles}",
                        vectors.len()
                    ));
                }
                for (i, v) in vectors.iter().enumerate() {
                    let total: f64 = v.iter().sum();
                    if v.len() != m + 1
                        || v.iter().any(|p| !(0.0..=1.0).contains(p))
                        || (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE
                    {
                        out.push(format!(
                            "initial condition: fixed vector {} must be {} probabilities summing to 1",
                            i + 1,
                            m + 1
                        ));
                    }
                }
            }
            _ => {}
        }
        out
    }
}

fn one_hot(j: usize, m: usize) -> Vec<f64> {
    let mut p = vec![0.0; m + 1];
    p[j] = 1.0;
    p
}

impl fmt::Display for InitialConditionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialConditionPolicy::RandomSimplex => f.write_str("random-simplex"),
            InitialConditionPolicy::AllCity => f.write_str("all-city"),
            InitialConditionPolicy::AllSuburb(j) => write!(f, "all-suburb-{}", j + 1),
            InitialConditionPolicy::Fixed(v) => write!(f, "fixed{v:?}"),
        }
    }
}

impl FromStr for InitialConditionPolicy {
    type Err = Error;

    /// Accepts `random-simplex`, `all-city` and `all-suburb-J` (one-based).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random-simplex" => Ok(Self::RandomSimplex),
            "all-city" => Ok(Self::AllCity),
            other => other
                .strip_prefix("all-suburb-")
                .and_then(|j| j.parse::<usize>().ok())
                .filter(|&j| j >= 1)
                .map(|j| Self::AllSuburb(j - 1))
                .ok_or_else(|| {
                    Error::validation(format!(
                        "unknown initial-condition policy `{other}` \
                         (expected random-simplex, all-city or all-suburb-J)"
                    ))
                }),
        }
    }
}

/// Complete description of the closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    references: Vec<f64>,
    profiles: Vec<DriverProfile>,
    controllers: ControllerBank,
    filters: FilterBank,
    ic_policy: InitialConditionPolicy,
    decimation: usize,
}

impl Scenario {
    /// Defaults to random-simplex initial conditions and controllers updating
    /// every step.
    pub fn new(
        references: Vec<f64>,
        profiles: Vec<DriverProfile>,
        controllers: ControllerBank,
        filters: FilterBank,
    ) -> Result<Self> {
        let s = Self {
            references,
            profiles,
            controllers,
            filters,
            ic_policy: InitialConditionPolicy::RandomSimplex,
            decimation: 1,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_ic_policy(mut self, policy: InitialConditionPolicy) -> Result<Self> {
        self.ic_policy = policy;
        self.validate()?;
        Ok(self)
    }

    /// Controllers update only on steps divisible by `decimation` and hold
    /// their output in between.
    pub fn with_decimation(mut self, decimation: usize) -> Result<Self> {
        self.decimation = decimation;
        self.validate()?;
        Ok(self)
    }

    pub fn with_controllers(mut self, controllers: ControllerBank) -> Result<Self> {
        self.controllers = controllers;
        self.validate()?;
        Ok(self)
    }

    pub fn with_filters(mut self, filters: FilterBank) -> Result<Self> {
        self.filters = filters;
        self.validate()?;
        Ok(self)
    }

    pub fn with_profiles(mut self, profiles: Vec<DriverProfile>) -> Result<Self> {
        self.profiles = profiles;
        self.validate()?;
        Ok(self)
    }

    pub fn with_references(mut self, references: Vec<f64>) -> Result<Self> {
        self.references = references;
        self.validate()?;
        Ok(self)
    }

    /// Every violated invariant, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let m = self.references.len();
        let mut out = Vec::new();
        if m == 0 {
            out.push("references: at least one suburb reference is required".to_string());
        }
        if self.profiles.is_empty() {
            out.push("profiles: at least one driver profile is required".to_string());
        }
        for p in &self.profiles {
            if p.suburb_count() != m {
                out.push(format!(
                    "profile `{}`: {} suburbs, but there are {m} references",
                    p.name(),
                    p.suburb_count()
                ));
            }
        }
        let mut names: Vec<&str> = self.profiles.iter().map(DriverProfile::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            out.push("profiles: names must be unique".to_string());
        }
        if self.controllers.len() != m {
            out.push(format!(
                "controllers: {} channels, expected {m}",
                self.controllers.len()
            ));
        }
        if self.filters.len() != m {
            out.push(format!("filters: {} channels, expected {m}", self.filters.len()));
        }
        let n = self.driver_count();
        if m > 0 && n <= m {
            out.push(format!(
                "profiles: {n} drivers in total, need more than the {m} suburbs"
            ));
        }
        for (j, r) in self.references.iter().enumerate() {
            if !r.is_finite() || *r < 0.0 {
                out.push(format!("references: r_{} = {r} must be finite and ≥ 0", j + 1));
            }
        }
        let total: f64 = self.references.iter().sum();
        if total > n as f64 {
            out.push(format!(
                "references: Σ r = {total} exceeds the {n} drivers available"
            ));
        }
        if self.decimation == 0 {
            out.push("decimation must be at least 1".to_string());
        }
        out.extend(self.ic_policy.violations(m, self.profiles.len()));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn references(&self) -> &[f64] {
        &self.references
    }

    pub fn profiles(&self) -> &[DriverProfile] {
        &self.profiles
    }

    pub fn controllers(&self) -> &ControllerBank {
        &self.controllers
    }

    pub fn filters(&self) -> &FilterBank {
        &self.filters
    }

    pub fn ic_policy(&self) -> &InitialConditionPolicy {
        &self.ic_policy
    }

    pub fn decimation(&self) -> usize {
        self.decimation
    }

    /// `M`.
    pub fn suburb_count(&self) -> usize {
        self.references.len()
    }

    /// `N`.
    pub fn driver_count(&self) -> usize {
        self.profiles.iter().map(DriverProfile::population).sum()
    }

    /// Zero-based indices of unstable controller and filter channels.
    pub fn stability_violations(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .controllers
            .unstable_channels()
            .into_iter()
            .map(|j| {
                format!(
                    "controller channel {} is not stable (spectral radius {})",
                    j + 1,
                    self.controllers.channels()[j].spectral_radius()
                )
            })
            .collect();
        out.extend(self.filters.unstable_channels().into_iter().map(|j| {
            format!(
                "filter channel {} is not stable (spectral radius {})",
                j + 1,
                self.filters.channels()[j].spectral_radius()
            )
        }));
        out
    }
}

/// What one step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub filtered: Vec<f64>,
    pub error: Vec<f64>,
    pub incentives: Vec<f64>,
    /// `[profile][location]`, City last.
    pub counts: Vec<Vec<u64>>,
}

impl StepRecord {
    pub fn totals(&self) -> Vec<u64> {
        let mut t = vec![0; self.counts.first().map_or(0, Vec::len)];
        for row in &self.counts {
            for (a, b) in t.iter_mut().zip(row) {
                *a += b;
            }
        }
        t
    }
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct LoopState {
    k: usize,
    drivers: Vec<ChoiceOutcome>,
    controllers: ControllerBank,
    filters: FilterBank,
    incentives: Vec<f64>,
    initial_probabilities: Vec<Vec<f64>>,
    last: Option<StepRecord>,
}

impl LoopState {
    /// Zeroes the banks and draws every driver's initial location.
    pub fn init<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Self> {
        scenario.validate()?;
        let m = scenario.suburb_count();
        let mut drivers = Vec::with_capacity(scenario.driver_count());
        let mut initial_probabilities = Vec::with_capacity(scenario.profiles.len());
        for (i, profile) in scenario.profiles.iter().enumerate() {
            let p = scenario.ic_policy.probabilities(i, m, rng);
            for _ in 0..profile.population() {
                drivers.push(sample_index(&p, rng));
            }
            initial_probabilities.push(p);
        }
        let mut controllers = scenario.controllers.clone();
        let mut filters = scenario.filters.clone();
        controllers.reset();
        filters.reset();
        Ok(Self {
            k: 0,
            drivers,
            controllers,
            filters,
            incentives: vec![0.0; m],
            initial_probabilities,
            last: None,
        })
    }

    /// Seeds a fresh stream with [`run_rng`]`(seed, 0)` and initialises from it.
    pub fn init_seeded(scenario: &Scenario, seed: u64) -> Result<(Self, ChaCha8Rng)> {
        let mut rng = run_rng(seed, 0);
        let state = Self::init(scenario, &mut rng)?;
        Ok((state, rng))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `x^i`, profile-major.
    pub fn driver_states(&self) -> &[ChoiceOutcome] {
        &self.drivers
    }

    /// Overrides the current location of driver `i` (profile-major index).
    pub fn set_driver_state(&mut self, i: usize, outcome: ChoiceOutcome) -> Result<()> {
        let m = self.incentives.len();
        if outcome.location_index() > m {
            return Err(Error::Domain(format!(
                "location {} out of range (City is {m})",
                outcome.location_index()
            )));
        }
        let slot = self
            .drivers
            .get_mut(i)
            .ok_or_else(|| Error::Domain(format!("driver {i} does not exist")))?;
        *slot = outcome;
        Ok(())
    }

    pub fn initial_probabilities(&self) -> &[Vec<f64>] {
        &self.initial_probabilities
    }

    pub fn controllers(&self) -> &ControllerBank {
        &self.controllers
    }

    pub fn filters(&self) -> &FilterBank {
        &self.filters
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.last.as_ref()
    }

    pub fn step<R: Rng + ?Sized>(&mut self, scenario: &Scenario, rng: &mut R) -> Result<StepRecord> {
        let m = scenario.suburb_count();
        let k = self.k;

        let filtered = self.filters.outputs();
        let error: Vec<f64> = scenario
            .references
            .iter()
            .zip(&filtered)
            .map(|(r, y)| r - y)
            .collect();
        if k.is_multiple_of(scenario.decimation) {
            self.controllers.step_into(&error, &mut self.incentives)?;
        }
        if let Some(j) = self.incentives.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!(
                "incentive of controller channel {} is {} at step {k}",
                j + 1,
                self.incentives[j]
            )));
        }

        let mut counts = Vec::with_capacity(scenario.profiles.len());
        let mut offset = 0;
        for profile in &scenario.profiles {
            let p = profile.choice_probabilities(&self.incentives)?;
            let mut row = vec![0u64; m + 1];
            for x in &mut self.drivers[offset..offset + profile.population()] {
                row[x.location_index()] += 1;
                *x = sample_index(p.as_slice(), rng);
            }
            offset += profile.population();
            counts.push(row);
        }

        let record = StepRecord {
            k,
            filtered,
            error,
            incentives: self.incentives.clone(),
            counts,
        };
        self.filters.update(&record.totals())?;
        self.k += 1;
        self.last = Some(record.clone());
        Ok(record)
    }
}

/// Trajectories of one run, indexed `[k][…]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub seed: u64,
    pub stream: u64,
    pub scenario_digest: String,
    pub profile_names: Vec<String>,
    pub populations: Vec<usize>,
    pub suburbs: usize,
    pub initial_probabilities: Vec<Vec<f64>>,
    pub filtered: Vec<Vec<f64>>,
    pub error: Vec<Vec<f64>>,
    pub incentives: Vec<Vec<f64>>,
    /// `[k][profile][location]`.
    pub counts: Vec<Vec<Vec<u64>>>,
}

impl SimulationRun {
    pub fn steps(&self) -> usize {
        self.error.len()
    }

    /// Total drivers at each location at step `k`.
    pub fn totals(&self, k: usize) -> Vec<u64> {
        let mut t = vec![0; self.suburbs + 1];
        for row in &self.counts[k] {
            for (a, b) in t.iter_mut().zip(row) {
                *a += b;
            }
        }
        t
    }
}

/// `steps` iterations from a fresh state on stream 0 of `seed`.
pub fn run(scenario: &Scenario, steps: usize, seed: u64) -> Result<SimulationRun> {
    run_stream(scenario, steps, seed, 0)
}

/// Same as [`run`] on stream `stream` of `seed`; run `i` of an ensemble uses
/// stream `i`.
pub fn run_stream(scenario: &Scenario, steps: usize, seed: u64, stream: u64) -> Result<SimulationRun> {
    if steps == 0 {
        return Err(Error::validation("steps must be at least 1"));
    }
    let mut rng = run_rng(seed, stream);
    let mut state = LoopState::init(scenario, &mut rng)?;
    let mut out = SimulationRun {
        seed,
        stream,
        scenario_digest: scenario.digest(),
        profile_names: scenario.profiles.iter().map(|p| p.name().to_string()).collect(),
        populations: scenario.profiles.iter().map(DriverProfile::population).collect(),
        suburbs: scenario.suburb_count(),
        initial_probabilities: state.initial_probabilities.clone(),
        filtered: Vec::with_capacity(steps),
        error: Vec::with_capacity(steps),
        incentives: Vec::with_capacity(steps),
        counts: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let rec = state.step(scenario, &mut rng)?;
        out.filtered.push(rec.filtered);
        out.error.push(rec.error);
        out.incentives.push(rec.incentives);
        out.counts.push(rec.counts);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice_model::LocationUtilityParams;
    use crate::lti_blocks::BlockSpec;
    use crate::scenario_io::paper_scenario;

    fn city_start(s: Scenario) -> Scenario {
        s.with_ic_policy(InitialConditionPolicy::AllCity).unwrap()
    }

    #[test]
    fn fixed_all_city_start() {
        let s = city_start(paper_scenario());
        let (mut state, mut rng) = LoopState::init_seeded(&s, 5).unwrap();
        assert!(state.driver_states().iter().all(|d| d.is_city(2)));
        let rec = state.step(&s, &mut rng).unwrap();
        assert_eq!(rec.totals(), vec![0, 0, 100]);
    }

    #[test]
    fn first_step_incentives_are_feedthrough_of_references() {
        let s = city_start(paper_scenario());
        let (mut state, mut rng) = LoopState::init_seeded(&s, 5).unwrap();
        let rec = state.step(&s, &mut rng).unwrap();
        assert_eq!(rec.filtered, vec![0.0, 0.0]);
        assert_eq!(rec.error, vec![25.0, 35.0]);
        assert!((rec.incentives[0] - 3.75).abs() < 1e-15);
        assert!((rec.incentives[1] - 7.0).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_initial_drivers() {
        let s = paper_scenario();
        let (a, _) = LoopState::init_seeded(&s, 99).unwrap();
        let (b, _) = LoopState::init_seeded(&s, 99).unwrap();
        assert_eq!(a.driver_states(), b.driver_states());
        assert_eq!(a.initial_probabilities(), b.initial_probabilities());
        let (c, _) = LoopState::init_seeded(&s, 100).unwrap();
        assert_ne!(a.driver_states(), c.driver_states());
    }

    #[test]
    fn random_simplex_component_means() {
        // Dirichlet(1,1,1): mean 1/3, variance (1/3)(2/3)/4 = 1/18 per component
        let s = paper_scenario();
        let draws = 10_000;
        let mut rng = run_rng(2024, 0);
        let mut sums = [0.0; 3];
        for _ in 0..draws {
            let p = InitialConditionPolicy::RandomSimplex.probabilities(0, 2, &mut rng);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (s, v) in sums.iter_mut().zip(&p) {
                *s += v;
            }
        }
        let sigma = (1.0f64 / 18.0 / draws as f64).sqrt();
        for s in sums {
            assert!((s / draws as f64 - 1.0 / 3.0).abs() < 3.0 * sigma);
        }
        drop(s);
    }

    #[test]
    fn absorbing_city_preference() {
        let m = 2;
        let profile = DriverProfile::new(
            "stubborn",
            vec![LocationUtilityParams::suburb(10.0, 0.0); m],
            LocationUtilityParams::city(1e6, 0.0),
            50,
        )
        .unwrap();
        let s = paper_scenario()
            .with_references(vec![10.0, 10.0])
            .unwrap()
            .with_profiles(vec![profile])
            .unwrap()
            .with_ic_policy(InitialConditionPolicy::AllCity)
            .unwrap();
        let run = run(&s, 300, 1).unwrap();
        for k in 0..run.steps() {
            assert_eq!(run.totals(k), vec![0, 0, 50]);
        }
    }

    #[test]
    fn run_lengths_and_determinism() {
        let s = paper_scenario();
        let one = run(&s, 1, 3).unwrap();
        assert_eq!(one.steps(), 1);
        assert_eq!(one.counts.len(), 1);
        let a = run(&s, 400, 17).unwrap();
        let b = run(&s, 400, 17).unwrap();
        assert_eq!(a, b);
        assert!(run(&s, 0, 17).is_err());
    }

    #[test]
    fn counts_are_conserved() {
        let s = paper_scenario();
        let r = run(&s, 500, 8).unwrap();
        for k in 0..r.steps() {
            assert_eq!(r.totals(k).iter().sum::<u64>(), 100);
            for (row, pop) in r.counts[k].iter().zip(&r.populations) {
                assert_eq!(row.iter().sum::<u64>() as usize, *pop);
            }
            assert!(r.incentives[k].iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn current_decisions_do_not_reach_current_incentives() {
        let s = paper_scenario();
        let (mut state, mut rng) = LoopState::init_seeded(&s, 4).unwrap();
        for _ in 0..20 {
            state.step(&s, &mut rng).unwrap();
        }
        let mut perturbed = state.clone();
        for i in 0..100 {
            perturbed.set_driver_state(i, ChoiceOutcome::new(2)).unwrap();
        }
        let mut rng2 = rng.clone();
        let a = state.step(&s, &mut rng).unwrap();
        let b = perturbed.step(&s, &mut rng2).unwrap();
        assert_eq!(a.incentives, b.incentives);
        assert_ne!(a.counts, b.counts);
        let a2 = state.step(&s, &mut rng).unwrap();
        let b2 = perturbed.step(&s, &mut rng2).unwrap();
        assert_ne!(a2.incentives, b2.incentives);
    }

    #[test]
    fn decimation_holds_incentives() {
        let s = paper_scenario().with_decimation(3).unwrap();
        let r = run(&s, 30, 2).unwrap();
        for k in 0..30 {
            if k % 3 != 0 {
                assert_eq!(r.incentives[k], r.incentives[k - 1]);
            }
        }
        assert!(paper_scenario().with_decimation(0).is_err());
    }

    #[test]
    fn scenario_validation_lists_violations() {
        let s = paper_scenario();
        let err = s
            .clone()
            .with_references(vec![80.0, 35.0, 1.0])
            .unwrap_err();
        let Error::Validation(v) = err else { panic!() };
        assert!(v.len() >= 4, "{v:?}");
        assert!(s.clone().with_references(vec![-1.0, 3.0]).is_err());
        assert!(s
            .clone()
            .with_ic_policy(InitialConditionPolicy::AllSuburb(2))
            .is_err());
        assert!(s
            .clone()
            .with_ic_policy(InitialConditionPolicy::Fixed(vec![vec![0.5, 0.5]]))
            .is_err());
        assert!(s
            .with_controllers(ControllerBank::new(vec![BlockSpec::lag(0.0, 0.5, 1.0)]).unwrap())
            .is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for name in ["random-simplex", "all-city", "all-suburb-1", "all-suburb-12"] {
            let p: InitialConditionPolicy = name.parse().unwrap();
            assert_eq!(p.to_string(), name);
        }
        assert!("all-suburb-0".parse::<InitialConditionPolicy>().is_err());
        assert!("sometimes".parse::<InitialConditionPolicy>().is_err());
    }
}
