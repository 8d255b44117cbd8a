//! Monte Carlo ensembles of the closed loop.

mod ergodicity;
mod fixed_point;
pub mod moments;

use std::fmt;
use std::ops::Range;

use rayon::prelude::*;

pub use ergodicity::{ergodicity_check, ConvergenceEntry, ConvergenceReport};
pub use fixed_point::{fixed_point, FixedPointPrediction, FIXED_POINT_MAX_ITERATIONS};
pub use moments::{ExactSum, Moments};

use crate::error::{Error, Result};
use crate::feedback_loop::{run_stream, InitialConditionPolicy, Scenario, SimulationRun};

/// A per-step series tracked across runs. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    Error(usize),
    Incentive(usize),
    Filtered(usize),
    /// Drivers of `profile` at `location` (`M` is the City).
    Count { profile: usize, location: usize },
    /// Drivers of all profiles at `location`.
    Total(usize),
    /// Drivers over all locations; conserved at `N`.
    AllDrivers,
}

impl Quantity {
    /// Every tracked series for a scenario, in output order.
    pub fn layout(scenario: &Scenario) -> Vec<Quantity> {
        Self::layout_for(scenario.suburb_count(), scenario.profiles().len())
    }

    pub fn layout_for(suburbs: usize, profiles: usize) -> Vec<Quantity> {
        let mut q = Vec::new();
        q.extend((0..suburbs).map(Quantity::Error));
        q.extend((0..suburbs).map(Quantity::Incentive));
        q.extend((0..suburbs).map(Quantity::Filtered));
        for profile in 0..profiles {
            q.extend((0..=suburbs).map(|location| Quantity::Count { profile, location }));
        }
        q.extend((0..=suburbs).map(Quantity::Total));
        q.push(Quantity::AllDrivers);
        q
    }

    /// Stable machine name, e.g. `pi_1`, `count_class2_city`.
    pub fn name(&self, suburbs: usize, profile_names: &[String]) -> String {
        let loc = |l: usize| {
            if l == suburbs {
                "city".to_string()
            } else {
                format!("suburb_{}", l + 1)
            }
        };
        match *self {
            Quantity::Error(j) => format!("e_{}", j + 1),
            Quantity::Incentive(j) => format!("pi_{}", j + 1),
            Quantity::Filtered(j) => format!("yhat_{}", j + 1),
            Quantity::Count { profile, location } => {
                format!("count_{}_{}", profile_names[profile], loc(location))
            }
            Quantity::Total(l) => format!("total_{}", loc(l)),
            Quantity::AllDrivers => "total_all".to_string(),
        }
    }

    /// Value of this quantity at step `k` of a run.
    pub fn value(&self, run: &SimulationRun, k: usize) -> f64 {
        match *self {
            Quantity::Error(j) => run.error[k][j],
            Quantity::Incentive(j) => run.incentives[k][j],
            Quantity::Filtered(j) => run.filtered[k][j],
            Quantity::Count { profile, location } => run.counts[k][profile][location] as f64,
            Quantity::Total(l) => run.counts[k].iter().map(|row| row[l]).sum::<u64>() as f64,
            Quantity::AllDrivers => run.counts[k].iter().flatten().sum::<u64>() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub runs: usize,
    pub steps: usize,
    pub master_seed: u64,
    /// Overrides the scenario's policy when set.
    pub ic_policy: Option<InitialConditionPolicy>,
    /// Refuse to run when a controller or filter channel is unstable.
    pub require_stable: bool,
}

impl EnsembleConfig {
    pub fn new(runs: usize, steps: usize, master_seed: u64) -> Self {
        Self {
            runs,
            steps,
            master_seed,
            ic_policy: None,
            require_stable: true,
        }
    }

    pub fn with_ic_policy(mut self, policy: InitialConditionPolicy) -> Self {
        self.ic_policy = Some(policy);
        self
    }

    pub fn allow_unstable(mut self) -> Self {
        self.require_stable = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.runs == 0 {
            v.push("runs must be at least 1".to_string());
        }
        if self.steps == 0 {
            v.push("steps must be at least 1".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Per-step moments of every tracked quantity; merging is exact, so any
/// partition of the runs gives the same bits.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAccumulator {
    quantities: Vec<Quantity>,
    steps: usize,
    runs: usize,
    /// `[quantity][k]`.
    moments: Vec<Vec<Moments>>,
}

impl EnsembleAccumulator {
    pub fn new(quantities: Vec<Quantity>, steps: usize) -> Self {
        let moments = vec![vec![Moments::new(); steps]; quantities.len()];
        Self {
            quantities,
            steps,
            runs: 0,
            moments,
        }
    }

    pub fn push(&mut self, run: &SimulationRun) {
        debug_assert_eq!(run.steps(), self.steps);
        for (q, series) in self.quantities.iter().zip(&mut self.moments) {
            for (k, m) in series.iter_mut().enumerate() {
                m.push(q.value(run, k));
            }
        }
        self.runs += 1;
    }

    pub fn merge(mut self, other: Self) -> Self {
        debug_assert_eq!(self.quantities, other.quantities);
        for (mine, theirs) in self.moments.iter_mut().zip(&other.moments) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
        self.runs += other.runs;
        self
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn finish(&self, suburbs: usize, profile_names: Vec<String>, master_seed: u64) -> EnsembleStats {
        let mean = self
            .moments
            .iter()
            .map(|s| s.iter().map(Moments::mean).collect())
            .collect();
        let std = self
            .moments
            .iter()
            .map(|s| s.iter().map(Moments::std_dev).collect())
            .collect();
        EnsembleStats {
            runs: self.runs,
            steps: self.steps,
            master_seed,
            suburbs,
            profile_names,
            quantities: self.quantities.clone(),
            mean,
            std,
        }
    }
}

/// Per-step mean and (sample) standard deviation across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub runs: usize,
    pub steps: usize,
    pub master_seed: u64,
    pub suburbs: usize,
    pub profile_names: Vec<String>,
    pub quantities: Vec<Quantity>,
    /// `[quantity][k]`, aligned with `quantities`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl EnsembleStats {
    fn index(&self, q: Quantity) -> Option<usize> {
        self.quantities.iter().position(|&x| x == q)
    }

    pub fn mean(&self, q: Quantity) -> Option<&[f64]> {
        self.index(q).map(|i| self.mean[i].as_slice())
    }

    pub fn std(&self, q: Quantity) -> Option<&[f64]> {
        self.index(q).map(|i| self.std[i].as_slice())
    }

    /// Time average of the ensemble mean over `window`.
    pub fn window_mean(&self, q: Quantity, window: Range<usize>) -> Option<f64> {
        let series = self.mean(q)?;
        let slice = series.get(window)?;
        if slice.is_empty() {
            return None;
        }
        let mut s = ExactSum::new();
        slice.iter().for_each(|&v| s.add(v));
        Some(s.value() / slice.len() as f64)
    }

    pub fn name(&self, q: Quantity) -> String {
        q.name(self.suburbs, &self.profile_names)
    }
}

impl fmt::Display for EnsembleStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} runs × {} steps (master seed {})", self.runs, self.steps, self.master_seed)?;
        let last = self.steps - 1;
        for (i, q) in self.quantities.iter().enumerate() {
            writeln!(
                f,
                "  {:<28} final mean {:>12.4}  std {:>10.4}",
                self.name(*q),
                self.mean[i][last],
                self.std[i][last]
            )?;
        }
        Ok(())
    }
}

fn prepare(scenario: &Scenario, config: &EnsembleConfig) -> Result<Scenario> {
    config.validate()?;
    let scenario = match &config.ic_policy {
        Some(p) => scenario.clone().with_ic_policy(p.clone())?,
        None => scenario.clone(),
    };
    if config.require_stable {
        let unstable = scenario.stability_violations();
        if !unstable.is_empty() {
            return Err(Error::Validation(unstable));
        }
    }
    Ok(scenario)
}

fn wrap_run(i: usize, seed: u64, e: Error) -> Error {
    Error::Run {
        run: i,
        seed,
        source: Box::new(e),
    }
}

/// Runs `config.runs` independent simulations (run `i` on stream `i` of the
/// master seed) in parallel and aggregates their statistics. The result does
/// not depend on the number of threads.
pub fn run_ensemble(scenario: &Scenario, config: &EnsembleConfig) -> Result<EnsembleStats> {
    let scenario = prepare(scenario, config)?;
    let layout = Quantity::layout(&scenario);
    let seed = config.master_seed;
    let acc = (0..config.runs)
        .into_par_iter()
        .with_min_len(4)
        .map(|i| run_stream(&scenario, config.steps, seed, i as u64).map_err(|e| wrap_run(i, seed, e)))
        .try_fold(
            || EnsembleAccumulator::new(layout.clone(), config.steps),
            |mut acc, run| {
                acc.push(&run?);
                Ok::<_, Error>(acc)
            },
        )
        .try_reduce(
            || EnsembleAccumulator::new(layout.clone(), config.steps),
            |a, b| Ok(a.merge(b)),
        )?;
    Ok(finish(&scenario, &acc, seed))
}

/// Like [`run_ensemble`] but also returns every run, ordered by run index.
pub fn run_ensemble_retaining(
    scenario: &Scenario,
    config: &EnsembleConfig,
) -> Result<(EnsembleStats, Vec<SimulationRun>)> {
    let scenario = prepare(scenario, config)?;
    let seed = config.master_seed;
    let runs: Vec<SimulationRun> = (0..config.runs)
        .into_par_iter()
        .map(|i| run_stream(&scenario, config.steps, seed, i as u64).map_err(|e| wrap_run(i, seed, e)))
        .collect::<Result<_>>()?;
    let mut acc = EnsembleAccumulator::new(Quantity::layout(&scenario), config.steps);
    runs.iter().for_each(|r| acc.push(r));
    Ok((finish(&scenario, &acc, seed), runs))
}

fn finish(scenario: &Scenario, acc: &EnsembleAccumulator, seed: u64) -> EnsembleStats {
    let names = scenario
        .profiles()
        .iter()
        .map(|p| p.name().to_string())
        .collect();
    acc.finish(scenario.suburb_count(), names, seed)
}
