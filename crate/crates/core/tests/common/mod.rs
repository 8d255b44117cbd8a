#![allow(dead_code)]

use parkloop_core::scenario_io::paper_scenario;
use parkloop_core::{BlockSpec, ControllerBank, Scenario};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, Discrete};

/// Textbook `exp(u_l) / Σ exp(u)`, no stabilisation.
pub fn naive_logit(utilities: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = utilities.iter().map(|u| u.exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Pearson chi-square of observed category counts against probabilities.
/// Adjacent categories are pooled until every cell expects at least five
/// observations. Returns `(statistic, degrees of freedom, p-value)`; with a
/// single cell left the test is vacuous and the p-value is 1.
pub fn chi_square(observed: &[u64], probs: &[f64]) -> (f64, usize, f64) {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&obs, &p) in observed.iter().zip(probs) {
        o += obs as f64;
        e += p * n;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if e > 0.0 || o > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => cells.push((o, e)),
        }
    }
    if cells.len() < 2 {
        return (0.0, 0, 1.0);
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = cells.len() - 1;
    let p = ChiSquared::new(df as f64).unwrap().sf(stat);
    (stat, df, p)
}

/// Chi-square goodness of fit of i.i.d. draws against Binomial(n, p).
pub fn binomial_gof(samples: &[u64], n: u64, p: f64) -> (f64, usize, f64) {
    let mut hist = vec![0u64; n as usize + 1];
    for &s in samples {
        hist[s as usize] += 1;
    }
    let dist = Binomial::new(p.clamp(0.0, 1.0), n).unwrap();
    let probs: Vec<f64> = (0..=n).map(|x| dist.pmf(x)).collect();
    chi_square(&hist, &probs)
}

/// The reference scenario with both controllers replaced by constants.
pub fn open_loop(incentives: &[f64]) -> Scenario {
    let bank = ControllerBank::new(
        incentives
            .iter()
            .map(|&value| BlockSpec::Constant { value })
            .collect(),
    )
    .unwrap();
    paper_scenario().with_controllers(bank).unwrap()
}

/// 10 × 10 grid over [0, 10]², end points included.
pub fn incentive_grid() -> Vec<[f64; 2]> {
    let axis: Vec<f64> = (0..10).map(|i| 10.0 * i as f64 / 9.0).collect();
    axis.iter()
        .flat_map(|&a| axis.iter().map(move |&b| [a, b]))
        .collect()
}
