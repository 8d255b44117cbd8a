//! Mean-field steady state of the loop.
//!
//! Replacing every random count by its expectation and every block by its DC
//! gain gives `π_j = g_j·(r_j − n_j(π))`, with `n_j(π)` the expected number of
//! drivers in suburb `j` at incentives `π`. The iteration below is damped and
//! preconditioned by the Jacobian of that map: the logit slopes times the
//! controller gains easily exceed 10³, which makes an undamped (or uniformly
//! damped) iteration oscillate or crawl.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::feedback_loop::Scenario;

pub const FIXED_POINT_MAX_ITERATIONS: usize = 10_000;

/// Filters must pass constants through unchanged, within this tolerance.
const UNIT_GAIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointPrediction {
    /// `π*`.
    pub incentives: Vec<f64>,
    /// `e* = r − n(π*)`.
    pub errors: Vec<f64>,
    /// Expected drivers `[profile][location]`, City last.
    pub counts: Vec<Vec<f64>>,
    /// Expected drivers per location over all profiles.
    pub totals: Vec<f64>,
    /// Controller DC gains `g`.
    pub dc_gains: Vec<f64>,
    /// `max_j |g_j·(r_j − n_j(π*)) − π*_j|`.
    pub residual: f64,
    pub iterations: usize,
}

impl fmt::Display for FixedPointPrediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mean-field fixed point ({} iterations, residual {:.3e})", self.iterations, self.residual)?;
        for j in 0..self.incentives.len() {
            writeln!(
                f,
                "  suburb {}: g = {:.6}  pi* = {:.10}  e* = {:.10}  n* = {:.10}",
                j + 1,
                self.dc_gains[j],
                self.incentives[j],
                self.errors[j],
                self.totals[j]
            )?;
        }
        writeln!(f, "  city:     n* = {:.10}", self.totals[self.incentives.len()])?;
        for (p, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(f, "  profile {} expected counts: [{}]", p + 1, cells.join(", "))?;
        }
        Ok(())
    }
}

struct MeanField<'a> {
    scenario: &'a Scenario,
    gains: Vec<f64>,
}

impl MeanField<'_> {
    /// Expected counts per profile per location at `pi`.
    fn counts(&self, pi: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.scenario
            .profiles()
            .iter()
            .map(|p| {
                let probs = p.choice_probabilities(pi)?;
                Ok(probs
                    .as_slice()
                    .iter()
                    .map(|q| q * p.population() as f64)
                    .collect())
            })
            .collect()
    }

    fn totals(counts: &[Vec<f64>]) -> Vec<f64> {
        let mut t = vec![0.0; counts[0].len()];
        for row in counts {
            for (a, b) in t.iter_mut().zip(row) {
                *a += b;
            }
        }
        t
    }

    /// `F(π) = g∘(r − n(π)) − π`.
    fn residual(&self, pi: &[f64]) -> Result<Vec<f64>> {
        let totals = Self::totals(&self.counts(pi)?);
        Ok(self
            .scenario
            .references()
            .iter()
            .zip(&self.gains)
            .zip(pi)
            .enumerate()
            .map(|(j, ((r, g), p))| g * (r - totals[j]) - p)
            .collect())
    }

    /// `∂F/∂π = −I − diag(g)·∂n/∂π`.
    fn jacobian(&self, pi: &[f64]) -> Result<DMatrix<f64>> {
        let m = pi.len();
        let mut dn = DMatrix::zeros(m, m);
        for profile in self.scenario.profiles() {
            let p = profile.choice_probabilities(pi)?;
            let pop = profile.population() as f64;
            for l in 0..m {
                let w = profile.suburb_params()[l].incentive_weight;
                for j in 0..m {
                    let delta = if j == l { 1.0 } else { 0.0 };
                    dn[(j, l)] += pop * w * p.suburb(j) * (delta - p.suburb(l));
                }
            }
        }
        let g = DMatrix::from_diagonal(&DVector::from_column_slice(&self.gains));
        Ok(-DMatrix::identity(m, m) - g * dn)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves the mean-field balance from `π = 0` until the largest update is
/// below `tolerance`.
pub fn fixed_point(scenario: &Scenario, tolerance: f64) -> Result<FixedPointPrediction> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(Error::Domain(format!("tolerance must be positive, got {tolerance}")));
    }
    let unstable = scenario.stability_violations();
    if !unstable.is_empty() {
        return Err(Error::Validation(unstable));
    }
    let filter_gains = scenario.filters().dc_gains()?;
    let bad: Vec<String> = filter_gains
        .iter()
        .enumerate()
        .filter(|(_, g)| (*g - 1.0).abs() > UNIT_GAIN_TOLERANCE)
        .map(|(j, g)| format!("filter channel {} has DC gain {g}, expected 1", j + 1))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Validation(bad));
    }
    let field = MeanField {
        scenario,
        gains: scenario.controllers().dc_gains()?,
    };

    let m = scenario.suburb_count();
    let mut pi = vec![0.0; m];
    let mut f = field.residual(&pi)?;
    for iteration in 1..=FIXED_POINT_MAX_ITERATIONS {
        let jac = field.jacobian(&pi)?;
        let direction = jac
            .lu()
            .solve(&DVector::from_column_slice(&f))
            .ok_or_else(|| Error::Numeric("singular mean-field Jacobian".into()))?;
        // Newton direction −J⁻¹F, halved until the residual shrinks
        let mut damping = 1.0;
        let (next, next_f, update) = loop {
            let candidate: Vec<f64> = pi
                .iter()
                .zip(direction.iter())
                .map(|(p, d)| p - damping * d)
                .collect();
            let cf = field.residual(&candidate)?;
            let update = damping * max_abs(direction.as_slice());
            if max_abs(&cf) < max_abs(&f) || damping < 1e-12 || update < tolerance {
                break (candidate, cf, update);
            }
            damping *= 0.5;
        };
        pi = next;
        f = next_f;
        if update < tolerance {
            let counts = field.counts(&pi)?;
            let totals = MeanField::totals(&counts);
            let errors = scenario
                .references()
                .iter()
                .zip(&totals)
                .map(|(r, n)| r - n)
                .collect();
            return Ok(FixedPointPrediction {
                incentives: pi,
                errors,
                counts,
                totals,
                dc_gains: field.gains.clone(),
                residual: max_abs(&f),
                iterations: iteration,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: FIXED_POINT_MAX_ITERATIONS,
        residual: max_abs(&f),
        last: pi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice_model::{DriverProfile, LocationUtilityParams};
    use crate::lti_blocks::{BlockSpec, ControllerBank, FilterBank};
    use crate::scenario_io::paper_scenario;

    #[test]
    fn paper_scenario_matches_high_precision_reference() {
        // 50-digit root of the two-dimensional balance, computed independently
        let fp = fixed_point(&paper_scenario(), 1e-12).unwrap();
        let pi_ref = [5.079_454_193_077_227, 5.991_797_487_735_229];
        let e_ref = [3.352_775_044_935_463, 0.296_623_638_006_694_5];
        let n_ref = [21.647_224_955_064_537, 34.703_376_361_993_305, 43.649_398_682_942_16];
        for j in 0..2 {
            assert!((fp.incentives[j] - pi_ref[j]).abs() < 1e-9, "{:?}", fp.incentives);
            assert!((fp.errors[j] - e_ref[j]).abs() < 1e-9);
        }
        for l in 0..3 {
            assert!((fp.totals[l] - n_ref[l]).abs() < 1e-9);
        }
        assert!((fp.counts[0][1] - 19.910_264_089_196_703).abs() < 1e-9);
        assert!((fp.counts[1][0] - 21.557_606_818_676_86).abs() < 1e-9);
        assert!(fp.residual < 1e-9);
        assert_eq!(fp.dc_gains.len(), 2);
        assert!((fp.dc_gains[1] - 20.2).abs() < 1e-12);
    }

    #[test]
    fn insensitive_drivers_solve_in_one_update() {
        let zeroed: Vec<DriverProfile> = paper_scenario()
            .profiles()
            .iter()
            .map(|p| {
                let suburbs = p
                    .suburb_params()
                    .iter()
                    .map(|s| LocationUtilityParams::suburb(0.0, s.base))
                    .collect();
                DriverProfile::new(p.name(), suburbs, *p.city_params(), p.population()).unwrap()
            })
            .collect();
        let s = paper_scenario().with_profiles(zeroed).unwrap();
        let fp = fixed_point(&s, 1e-12).unwrap();
        let expected: Vec<f64> = (0..2)
            .map(|j| {
                let n: f64 = s
                    .profiles()
                    .iter()
                    .map(|p| p.population() as f64 * p.choice_probabilities(&[0.0, 0.0]).unwrap().suburb(j))
                    .sum();
                fp.dc_gains[j] * (s.references()[j] - n)
            })
            .collect();
        assert_eq!(fp.incentives, expected);
        assert!(fp.iterations <= 2);
    }

    /// Two identical suburbs, one profile; only the gains differ.
    fn symmetric(g1_kappa: f64, g2_kappa: f64) -> Scenario {
        let profile = DriverProfile::new(
            "only",
            vec![LocationUtilityParams::suburb(1.0, -2.0); 2],
            LocationUtilityParams::city(0.0, 0.0),
            100,
        )
        .unwrap();
        paper_scenario()
            .with_profiles(vec![profile])
            .unwrap()
            .with_references(vec![30.0, 30.0])
            .unwrap()
            .with_controllers(
                ControllerBank::new(vec![BlockSpec::lag(0.0, 0.5, g1_kappa), BlockSpec::lag(0.0, 0.5, g2_kappa)])
                    .unwrap(),
            )
            .unwrap()
    }

    /// Brute-force: scan π₁ on a fine grid, solving π₂ by bisection for each.
    fn brute_force(s: &Scenario) -> (f64, f64) {
        let g: Vec<f64> = s.controllers().dc_gains().unwrap();
        let p = &s.profiles()[0];
        let n = |a: f64, b: f64, j: usize| 100.0 * p.choice_probabilities(&[a, b]).unwrap().suburb(j);
        let solve2 = |a: f64| {
            let (mut lo, mut hi) = (-50.0, 50.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g[1] * (30.0 - n(a, mid, 1)) - mid > 0.0 {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            0.5 * (lo + hi)
        };
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let b = solve2(mid);
            if g[0] * (30.0 - n(mid, b, 0)) - mid > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let a = 0.5 * (lo + hi);
        (a, solve2(a))
    }

    #[test]
    fn larger_gain_leaves_smaller_error() {
        let s = symmetric(0.5, 20.0);
        let fp = fixed_point(&s, 1e-12).unwrap();
        let (a, b) = brute_force(&s);
        assert!((fp.incentives[0] - a).abs() < 1e-8);
        assert!((fp.incentives[1] - b).abs() < 1e-8);
        assert!(fp.errors[1].abs() < fp.errors[0].abs());
        for j in 0..2 {
            assert_eq!(fp.errors[j].signum(), (30.0 - fp.totals[j]).signum());
        }
        for row in &fp.counts {
            assert!(row.iter().all(|&c| (0.0..=100.0).contains(&c)));
        }
    }

    #[test]
    fn rejects_unstable_or_non_unit_filters() {
        let s = paper_scenario()
            .with_controllers(
                ControllerBank::new(vec![BlockSpec::lag(-0.01, 1.01, 0.15), BlockSpec::lag(-0.01, 0.99, 0.2)])
                    .unwrap(),
            )
            .unwrap();
        assert!(matches!(fixed_point(&s, 1e-10), Err(Error::Validation(_))));
        let halved = paper_scenario()
            .with_filters(
                FilterBank::new(vec![
                    BlockSpec::StateSpace { a: vec![vec![0.0]], b: vec![1.0], c: vec![0.5], d: 0.0 },
                    BlockSpec::Delay { steps: 1 },
                ])
                .unwrap(),
            )
            .unwrap();
        assert!(matches!(fixed_point(&halved, 1e-10), Err(Error::Validation(_))));
        assert!(fixed_point(&paper_scenario(), 0.0).is_err());
    }
}
