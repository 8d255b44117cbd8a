//! Discrete-time SISO blocks in state-space form.
//!
//! A block evolves as
//!
//! ```text
//! y[k]   = C·x[k] + D·u[k]
//! x[k+1] = A·x[k] + B·u[k]
//! ```
//!
//! Controllers and filters are both built from [`StateSpaceSiso`]; the
//! banks hold one independent block per suburb, so the state matrix of a
//! bank is block-diagonal and its spectral radius is the maximum over the
//! channels.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A block is stable when its spectral radius is below `1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSiso {
    order: usize,
    /// Row-major `order × order`.
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    x: Vec<f64>,
    x0: Vec<f64>,
}

impl StateSpaceSiso {
    /// `a` is row-major; the state starts at zero.
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, d: f64) -> Result<Self> {
        let n = b.len();
        let mut violations = Vec::new();
        if a.len() != n * n {
            violations.push(format!(
                "A has {} entries, expected {n}×{n} to match B",
                a.len()
            ));
        }
        if c.len() != n {
            violations.push(format!("C has length {}, expected {n}", c.len()));
        }
        if !a.iter().chain(&b).chain(&c).chain([&d]).all(|v| v.is_finite()) {
            violations.push("state-space matrices contain non-finite entries".into());
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(Self {
            order: n,
            a,
            b,
            c,
            d,
            x: vec![0.0; n],
            x0: vec![0.0; n],
        })
    }

    /// Sets the state that [`reset`](Self::reset) returns to, and the current state.
    pub fn with_initial_state(mut self, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != self.order {
            return Err(Error::Domain(format!(
                "initial state has length {}, expected {}",
                x0.len(),
                self.order
            )));
        }
        self.x.clone_from(&x0);
        self.x0 = x0;
        Ok(self)
    }

    /// Order-1 realisation of a first-order lag.
    pub fn lag(params: &LagControllerParams) -> Self {
        params.to_state_space()
    }

    /// Pure delay of `steps` samples as a shift register.
    pub fn delay(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Domain(
                "a delay of 0 steps needs direct feedthrough; use at least 1".into(),
            ));
        }
        let mut c = vec![0.0; steps];
        c[steps - 1] = 1.0;
        Self::shift_register(steps, c)
    }

    /// Strictly causal moving average of the previous `window` inputs.
    pub fn moving_average(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Domain("moving-average window must be at least 1".into()));
        }
        Self::shift_register(window, vec![1.0 / window as f64; window])
    }

    fn shift_register(n: usize, c: Vec<f64>) -> Result<Self> {
        let mut a = vec![0.0; n * n];
        for i in 1..n {
            a[i * n + i - 1] = 1.0;
        }
        let mut b = vec![0.0; n];
        b[0] = 1.0;
        Self::new(a, b, c, 0.0)
    }

    /// Emits `value` forever, whatever the input. Its state matrix has a unit
    /// eigenvalue, so it is reported as not stable.
    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![0.0], vec![value], 0.0)?.with_initial_state(vec![1.0])
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn feedthrough(&self) -> f64 {
        self.d
    }

    pub fn has_feedthrough(&self) -> bool {
        self.d != 0.0
    }

    pub fn reset(&mut self) {
        self.x.clone_from(&self.x0);
    }

    /// `C·x + D·u` from the current state, without advancing it.
    pub fn output(&self, u: f64) -> f64 {
        self.c.iter().zip(&self.x).map(|(c, x)| c * x).sum::<f64>() + self.d * u
    }

    /// `x ← A·x + B·u`.
    pub fn advance(&mut self, u: f64) -> Result<()> {
        let n = self.order;
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let row = &self.a[i * n..(i + 1) * n];
                row.iter().zip(&self.x).map(|(a, x)| a * x).sum::<f64>() + self.b[i] * u
            })
            .collect();
        if let Some(v) = next.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("block state became {v}")));
        }
        self.x = next;
        Ok(())
    }

    /// Output from the pre-step state, then the state update.
    pub fn step(&mut self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::Numeric(format!("block input is {u}")));
        }
        let y = self.output(u);
        if !y.is_finite() {
            return Err(Error::Numeric(format!("block output is {y}")));
        }
        self.advance(u)?;
        Ok(y)
    }

    pub fn state_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.order, self.order, &self.a)
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.state_matrix()).expect("state matrix is square")
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0 - STABILITY_MARGIN
    }

    /// Steady-state output per unit constant input, `C(I − A)⁻¹B + D`.
    pub fn dc_gain(&self) -> Result<f64> {
        if self.order == 0 {
            return Ok(self.d);
        }
        let n = self.order;
        let i_minus_a = DMatrix::identity(n, n) - self.state_matrix();
        let b = nalgebra::DVector::from_column_slice(&self.b);
        let solved = i_minus_a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Domain("block has a pole at z = 1; DC gain undefined".into()))?;
        let c = nalgebra::DVector::from_column_slice(&self.c);
        Ok(c.dot(&solved) + self.d)
    }
}

/// First-order lag compensator `π[k] = β·π[k−1] + κ·(e[k] − α·e[k−1])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagControllerParams {
    /// Zero of the compensator.
    pub alpha: f64,
    /// Pole of the compensator.
    pub beta: f64,
    /// Gain.
    pub kappa: f64,
}

impl LagControllerParams {
    pub fn new(alpha: f64, beta: f64, kappa: f64) -> Self {
        Self { alpha, beta, kappa }
    }

    /// `A = β, B = 1, C = κ(β − α), D = κ`, from `κ + κ(β − α)/(z − β)`.
    pub fn to_state_space(&self) -> StateSpaceSiso {
        let Self { alpha, beta, kappa } = *self;
        StateSpaceSiso::new(vec![beta], vec![1.0], vec![kappa * (beta - alpha)], kappa)
            .expect("order-1 realisation is well formed")
    }

    pub fn dc_gain(&self) -> f64 {
        self.kappa * (1.0 - self.alpha) / (1.0 - self.beta)
    }

    pub fn is_stable(&self) -> bool {
        self.beta.abs() < 1.0 - STABILITY_MARGIN
    }
}

/// Serialisable description of a block, kept alongside its realisation so
/// scenarios can be written back out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BlockSpec {
    Lag {
        alpha: f64,
        beta: f64,
        kappa: f64,
    },
    Constant {
        value: f64,
    },
    Delay {
        steps: usize,
    },
    MovingAverage {
        window: usize,
    },
    /// General realisation; `a` is given as rows.
    StateSpace {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        c: Vec<f64>,
        d: f64,
    },
}

impl BlockSpec {
    pub fn lag(alpha: f64, beta: f64, kappa: f64) -> Self {
        BlockSpec::Lag { alpha, beta, kappa }
    }

    pub fn realise(&self) -> Result<StateSpaceSiso> {
        match self {
            BlockSpec::Lag { alpha, beta, kappa } => {
                let p = LagControllerParams::new(*alpha, *beta, *kappa);
                if ![p.alpha, p.beta, p.kappa].iter().all(|v| v.is_finite()) {
                    return Err(Error::validation("lag parameters must be finite"));
                }
                Ok(p.to_state_space())
            }
            BlockSpec::Constant { value } => StateSpaceSiso::constant(*value),
            BlockSpec::Delay { steps } => StateSpaceSiso::delay(*steps),
            BlockSpec::MovingAverage { window } => StateSpaceSiso::moving_average(*window),
            BlockSpec::StateSpace { a, b, c, d } => {
                if a.iter().any(|row| row.len() != b.len()) {
                    return Err(Error::validation(format!(
                        "every row of A must have {} entries",
                        b.len()
                    )));
                }
                StateSpaceSiso::new(a.concat(), b.clone(), c.clone(), *d)
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BlockSpec::Lag { .. } => "lag",
            BlockSpec::Constant { .. } => "constant",
            BlockSpec::Delay { .. } => "delay",
            BlockSpec::MovingAverage { .. } => "moving_average",
            BlockSpec::StateSpace { .. } => "state_space",
        }
    }
}

/// Largest eigenvalue modulus of a square matrix.
///
/// Triangular matrices (every block used by the loop except general
/// state-space ones) are read off the diagonal exactly; anything else goes
/// through a real Schur decomposition.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::Domain(format!(
            "spectral radius needs a square matrix, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    if is_triangular(a) {
        return Ok(a.diagonal().iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    Ok(a.complex_eigenvalues()
        .iter()
        .fold(0.0, |m, z| m.max(z.norm())))
}

fn is_triangular(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let lower = (0..n).all(|i| (i + 1..n).all(|j| a[(i, j)] == 0.0));
    let upper = (0..n).all(|i| (0..i).all(|j| a[(i, j)] == 0.0));
    lower || upper
}

/// `diag(A_1, …, A_M)`.
pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut offset = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((offset, offset), (k, k)).copy_from(b);
        offset += k;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
struct Channels {
    specs: Vec<BlockSpec>,
    blocks: Vec<StateSpaceSiso>,
}

impl Channels {
    fn new(specs: Vec<BlockSpec>, what: &str) -> Result<Self> {
        let mut blocks = Vec::with_capacity(specs.len());
        let mut violations = Vec::new();
        for (j, spec) in specs.iter().enumerate() {
            match spec.realise() {
                Ok(b) => blocks.push(b),
                Err(e) => violations.push(format!("{what} channel {}: {e}", j + 1)),
            }
        }
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(Self { specs, blocks })
    }

    fn reset(&mut self) {
        self.blocks.iter_mut().for_each(StateSpaceSiso::reset);
    }

    fn spectral_radii(&self) -> Vec<f64> {
        self.blocks.iter().map(StateSpaceSiso::spectral_radius).collect()
    }

    fn unstable_channels(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| !b.is_stable())
            .map(|(j, _)| j)
            .collect()
    }

    fn state_matrix(&self) -> DMatrix<f64> {
        let blocks: Vec<_> = self.blocks.iter().map(StateSpaceSiso::state_matrix).collect();
        block_diagonal(&blocks)
    }
}

/// `C = diag(C_1, …, C_M)`: channel `j` maps `e_j` to `π_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerBank(Channels);

impl ControllerBank {
    pub fn new(specs: Vec<BlockSpec>) -> Result<Self> {
        Channels::new(specs, "controller").map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.blocks.is_empty()
    }

    pub fn specs(&self) -> &[BlockSpec] {
        &self.0.specs
    }

    pub fn channels(&self) -> &[StateSpaceSiso] {
        &self.0.blocks
    }

    pub fn reset(&mut self) {
        self.0.reset()
    }

    /// Steps every channel on its own error; writes the incentives to `out`.
    pub fn step_into(&mut self, errors: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(errors.len(), self.len());
        for (j, (block, &e)) in self.0.blocks.iter_mut().zip(errors).enumerate() {
            out[j] = block
                .step(e)
                .map_err(|err| Error::Numeric(format!("controller channel {}: {err}", j + 1)))?;
        }
        Ok(())
    }

    pub fn step(&mut self, errors: &[f64]) -> Result<Vec<f64>> {
        if errors.len() != self.len() {
            return Err(Error::Domain(format!(
                "controller bank has {} channels, got {} errors",
                self.len(),
                errors.len()
            )));
        }
        let mut out = vec![0.0; errors.len()];
        self.step_into(errors, &mut out)?;
        Ok(out)
    }

    pub fn spectral_radii(&self) -> Vec<f64> {
        self.0.spectral_radii()
    }

    /// Zero-based indices of channels failing the stability test.
    pub fn unstable_channels(&self) -> Vec<usize> {
        self.0.unstable_channels()
    }

    pub fn is_stable(&self) -> bool {
        self.unstable_channels().is_empty()
    }

    pub fn state_matrix(&self) -> DMatrix<f64> {
        self.0.state_matrix()
    }

    pub fn dc_gains(&self) -> Result<Vec<f64>> {
        self.0.blocks.iter().map(StateSpaceSiso::dc_gain).collect()
    }
}

/// Filter bank fed with the `M + 1` location counts; channel `j` sees only
/// suburb `j` and the City count is discarded. Channels must be strictly
/// causal so the loop has no algebraic cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank(Channels);

impl FilterBank {
    pub fn new(specs: Vec<BlockSpec>) -> Result<Self> {
        let channels = Channels::new(specs, "filter")?;
        let direct: Vec<String> = channels
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.has_feedthrough())
            .map(|(j, _)| {
                format!(
                    "filter channel {}: direct feedthrough (D ≠ 0) would create an algebraic loop",
                    j + 1
                )
            })
            .collect();
        if !direct.is_empty() {
            return Err(Error::Validation(direct));
        }
        Ok(Self(channels))
    }

    /// One pure unit delay per suburb.
    pub fn unit_delays(m: usize) -> Self {
        Self::new(vec![BlockSpec::Delay { steps: 1 }; m]).expect("delays are strictly causal")
    }

    pub fn len(&self) -> usize {
        self.0.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.blocks.is_empty()
    }

    pub fn specs(&self) -> &[BlockSpec] {
        &self.0.specs
    }

    pub fn channels(&self) -> &[StateSpaceSiso] {
        &self.0.blocks
    }

    pub fn reset(&mut self) {
        self.0.reset()
    }

    pub fn outputs_into(&self, out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(&self.0.blocks) {
            *o = b.output(0.0);
        }
    }

    /// `ŷ = C_F·x_F`.
    pub fn outputs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.outputs_into(&mut out);
        out
    }

    /// Advances every channel on its suburb count; `counts` has `M + 1`
    /// entries and the last (City) one is ignored.
    pub fn update(&mut self, counts: &[u64]) -> Result<()> {
        if counts.len() != self.len() + 1 {
            return Err(Error::Domain(format!(
                "filter bank expects {} counts, got {}",
                self.len() + 1,
                counts.len()
            )));
        }
        for (j, (block, &y)) in self.0.blocks.iter_mut().zip(counts).enumerate() {
            block
                .advance(y as f64)
                .map_err(|err| Error::Numeric(format!("filter channel {}: {err}", j + 1)))?;
        }
        Ok(())
    }

    pub fn spectral_radii(&self) -> Vec<f64> {
        self.0.spectral_radii()
    }

    pub fn unstable_channels(&self) -> Vec<usize> {
        self.0.unstable_channels()
    }

    pub fn is_stable(&self) -> bool {
        self.unstable_channels().is_empty()
    }

    pub fn state_matrix(&self) -> DMatrix<f64> {
        self.0.state_matrix()
    }

    pub fn dc_gains(&self) -> Result<Vec<f64>> {
        self.0.blocks.iter().map(StateSpaceSiso::dc_gain).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `π[k] = β·π[k−1] + κ·(e[k] − α·e[k−1])` with zero history.
    fn difference_equation(p: &LagControllerParams, e: &[f64]) -> Vec<f64> {
        let (mut prev_pi, mut prev_e) = (0.0, 0.0);
        e.iter()
            .map(|&ek| {
                let pi = p.beta * prev_pi + p.kappa * (ek - p.alpha * prev_e);
                prev_pi = pi;
                prev_e = ek;
                pi
            })
            .collect()
    }

    fn respond(block: &StateSpaceSiso, u: &[f64]) -> Vec<f64> {
        let mut b = block.clone();
        b.reset();
        u.iter().map(|&v| b.step(v).unwrap()).collect()
    }

    #[test]
    fn lag_realisation_coefficients() {
        let ss = LagControllerParams::new(-0.01, 0.9, 0.15).to_state_space();
        assert_eq!(ss.order(), 1);
        assert_eq!(ss.state_matrix()[(0, 0)], 0.9);
        assert_eq!(ss.feedthrough(), 0.15);
        assert!((ss.dc_gain().unwrap() - 1.515).abs() < 1e-12);
    }

    #[test]
    fn lag_step_response_hand_values() {
        let ss = LagControllerParams::new(-0.01, 0.9, 0.15).to_state_space();
        let y = respond(&ss, &[1.0, 1.0, 1.0]);
        assert!((y[0] - 0.15).abs() < 1e-15);
        assert!((y[1] - 0.2865).abs() < 1e-15);
        assert!((y[2] - 0.40935).abs() < 1e-15);
    }

    #[test]
    fn lag_converges_to_dc_gain() {
        for (p, gain) in [
            (LagControllerParams::new(-0.01, 0.9, 0.15), 1.515),
            (LagControllerParams::new(-0.01, 0.99, 0.2), 20.2),
        ] {
            assert!((p.dc_gain() - gain).abs() < 1e-12);
            let y = respond(&p.to_state_space(), &[1.0; 5000]);
            assert!((y.last().unwrap() - gain).abs() < 1e-9, "{}", y.last().unwrap());
        }
    }

    #[test]
    fn unity_lag_is_pass_through() {
        let ss = LagControllerParams::new(0.0, 0.0, 1.0).to_state_space();
        let u = [3.0, -1.5, 8.25, 0.0];
        assert_eq!(respond(&ss, &u), u.to_vec());
    }

    #[test]
    fn delay_examples() {
        assert_eq!(
            respond(&StateSpaceSiso::delay(1).unwrap(), &[3.0, 7.0, 2.0]),
            vec![0.0, 3.0, 7.0]
        );
        assert_eq!(
            respond(&StateSpaceSiso::delay(1).unwrap(), &[5.0, 8.0]),
            vec![0.0, 5.0]
        );
        assert_eq!(
            respond(&StateSpaceSiso::delay(2).unwrap(), &[1.0, 0.0, 0.0]),
            vec![0.0, 0.0, 1.0]
        );
        assert!(matches!(StateSpaceSiso::delay(0), Err(Error::Domain(_))));
    }

    #[test]
    fn delay_matches_shift_register_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..1000).map(|_| rng.random_range(-10.0..10.0)).collect();
        for steps in [1, 2, 5, 17] {
            let y = respond(&StateSpaceSiso::delay(steps).unwrap(), &u);
            for k in 0..u.len() {
                let expected = if k >= steps { u[k - steps] } else { 0.0 };
                assert_eq!(y[k], expected);
            }
        }
        let lag = LagControllerParams::new(0.0, 0.0, 1.0).to_state_space();
        assert_ne!(respond(&lag, &u), respond(&StateSpaceSiso::delay(1).unwrap(), &u));
    }

    #[test]
    fn zero_state_no_feedthrough_starts_at_zero() {
        let mut b = StateSpaceSiso::new(vec![0.3, 0.1, 0.0, 0.2], vec![1.0, 2.0], vec![4.0, 5.0], 0.0)
            .unwrap();
        assert_eq!(b.step(42.0).unwrap(), 0.0);
    }

    #[test]
    fn moving_average_examples() {
        let u = [2.0, 4.0, 6.0];
        assert_eq!(
            respond(&StateSpaceSiso::moving_average(2).unwrap(), &u),
            vec![0.0, 1.0, 3.0]
        );
        assert_eq!(
            StateSpaceSiso::moving_average(1).unwrap(),
            StateSpaceSiso::delay(1).unwrap()
        );
        let y = respond(&StateSpaceSiso::moving_average(7).unwrap(), &[2.5; 50]);
        assert!((y.last().unwrap() - 2.5).abs() < 1e-12);
        assert!((StateSpaceSiso::moving_average(7).unwrap().dc_gain().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_block_ignores_input_and_resets() {
        let mut b = StateSpaceSiso::constant(2.5).unwrap();
        for u in [0.0, 100.0, -3.0] {
            assert_eq!(b.step(u).unwrap(), 2.5);
        }
        b.reset();
        assert_eq!(b.state(), &[1.0]);
        assert!(!b.is_stable());
    }

    #[test]
    fn non_finite_is_a_numeric_error() {
        let mut b = LagControllerParams::new(0.0, 0.5, 1.0).to_state_space();
        assert!(matches!(b.step(f64::NAN), Err(Error::Numeric(_))));
        let mut big = StateSpaceSiso::new(vec![1e308], vec![1.0], vec![1.0], 0.0).unwrap();
        big.step(1e308).unwrap();
        assert!(matches!(big.step(1.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn dimension_checks() {
        assert!(StateSpaceSiso::new(vec![1.0, 0.0], vec![1.0], vec![1.0], 0.0).is_err());
        assert!(StateSpaceSiso::new(vec![1.0], vec![1.0], vec![1.0, 2.0], 0.0).is_err());
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        let d = DMatrix::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.99]);
        assert!((spectral_radius(&d).unwrap() - 0.99).abs() < 1e-15);
        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
        let t: f64 = 0.7;
        let rot = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]) * 0.5;
        assert!((spectral_radius(&rot).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn stability_examples() {
        assert!(LagControllerParams::new(-0.01, 0.9, 0.15).to_state_space().is_stable());
        assert!(!LagControllerParams::new(-0.01, 1.0, 0.15).to_state_space().is_stable());
        let bank = ControllerBank::new(vec![
            BlockSpec::lag(-0.01, 0.9, 0.15),
            BlockSpec::lag(-0.01, 1.2, 0.2),
        ])
        .unwrap();
        assert!(!bank.is_stable());
        assert_eq!(bank.unstable_channels(), vec![1]);
        assert!(FilterBank::unit_delays(4).is_stable());
    }

    #[test]
    fn stability_classifier_matches_pole_magnitude_on_grid() {
        for i in -150..=150 {
            let beta = i as f64 * 0.01;
            if (beta.abs() - 1.0).abs() < 1e-12 {
                continue;
            }
            let p = LagControllerParams::new(-0.01, beta, 0.15);
            assert_eq!(p.to_state_space().is_stable(), beta.abs() < 1.0, "beta = {beta}");
            assert_eq!(p.is_stable(), beta.abs() < 1.0);
        }
    }

    #[test]
    fn filter_bank_rejects_feedthrough_and_ignores_city() {
        assert!(FilterBank::new(vec![BlockSpec::lag(0.0, 0.5, 1.0)]).is_err());
        let mut bank = FilterBank::unit_delays(2);
        bank.update(&[3, 4, 93]).unwrap();
        assert_eq!(bank.outputs(), vec![3.0, 4.0]);
        let mut other = FilterBank::unit_delays(2);
        other.update(&[3, 4, 0]).unwrap();
        assert_eq!(other.outputs(), bank.outputs());
        assert!(bank.update(&[1, 2]).is_err());
    }

    #[test]
    fn bank_dc_gains() {
        let bank = ControllerBank::new(vec![
            BlockSpec::lag(-0.01, 0.9, 0.15),
            BlockSpec::lag(-0.01, 0.99, 0.2),
        ])
        .unwrap();
        let g = bank.dc_gains().unwrap();
        assert!((g[0] - 1.515).abs() < 1e-12 && (g[1] - 20.2).abs() < 1e-12);
        let unit = ControllerBank::new(vec![BlockSpec::lag(0.0, 1.0, 1.0)]).unwrap();
        assert!(unit.dc_gains().is_err());
    }

    #[test]
    fn general_state_space_spec() {
        let spec = BlockSpec::StateSpace {
            a: vec![vec![0.5, 0.1], vec![0.0, 0.2]],
            b: vec![1.0, 1.0],
            c: vec![1.0, 0.0],
            d: 0.0,
        };
        let b = spec.realise().unwrap();
        assert_eq!(b.order(), 2);
        assert!((b.spectral_radius() - 0.5).abs() < 1e-15);
        let ragged = BlockSpec::StateSpace {
            a: vec![vec![0.5], vec![0.0, 0.2]],
            b: vec![1.0, 1.0],
            c: vec![1.0, 0.0],
            d: 0.0,
        };
        assert!(ragged.realise().is_err());
    }

    fn random_block(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let n = rng.random_range(1..=3);
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn block_diagonal_radius_is_max_of_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let blocks: Vec<_> = (0..rng.random_range(1..=4)).map(|_| random_block(&mut rng)).collect();
            let per_block = blocks
                .iter()
                .map(|b| spectral_radius(b).unwrap())
                .fold(0.0, f64::max);
            let whole = spectral_radius(&block_diagonal(&blocks)).unwrap();
            assert!((whole - per_block).abs() < 1e-9, "{whole} vs {per_block}");
        }
    }

    proptest! {
        #[test]
        fn lag_realisation_matches_difference_equation(
            alpha in -1.0..1.0f64,
            beta in -0.999..0.999f64,
            kappa in -2.0..2.0f64,
            e in proptest::collection::vec(-10.0..10.0f64, 100),
        ) {
            let p = LagControllerParams::new(alpha, beta, kappa);
            let reference = difference_equation(&p, &e);
            let got = respond(&p.to_state_space(), &e);
            for (a, b) in got.iter().zip(&reference) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn response_is_linear(
            a in -3.0..3.0f64,
            b in -3.0..3.0f64,
            u1 in proptest::collection::vec(-10.0..10.0f64, 50),
            u2 in proptest::collection::vec(-10.0..10.0f64, 50),
        ) {
            let blocks = [
                LagControllerParams::new(-0.01, 0.9, 0.15).to_state_space(),
                StateSpaceSiso::moving_average(4).unwrap(),
                StateSpaceSiso::delay(3).unwrap(),
            ];
            let mixed: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| a * x + b * y).collect();
            for block in &blocks {
                let y1 = respond(block, &u1);
                let y2 = respond(block, &u2);
                let y = respond(block, &mixed);
                for k in 0..y.len() {
                    prop_assert!((y[k] - (a * y1[k] + b * y2[k])).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn bank_equals_independent_channels(
            e1 in proptest::collection::vec(-10.0..10.0f64, 30),
            e2 in proptest::collection::vec(-10.0..10.0f64, 30),
        ) {
            let specs = vec![BlockSpec::lag(-0.01, 0.9, 0.15), BlockSpec::lag(-0.01, 0.99, 0.2)];
            let mut bank = ControllerBank::new(specs.clone()).unwrap();
            let mut c1 = specs[0].realise().unwrap();
            let mut c2 = specs[1].realise().unwrap();
            for (x, y) in e1.iter().zip(&e2) {
                let out = bank.step(&[*x, *y]).unwrap();
                prop_assert_eq!(out[0], c1.step(*x).unwrap());
                prop_assert_eq!(out[1], c2.step(*y).unwrap());
            }
        }
    }
}
