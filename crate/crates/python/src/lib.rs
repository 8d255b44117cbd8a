use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use parkloop_core::ensemble::{run_ensemble, EnsembleConfig};
use parkloop_core::scenario_io::{self, EmitOptions, Outputs};
use parkloop_core::{InitialConditionPolicy, Quantity};

fn to_py(e: parkloop_core::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn policy(text: &str) -> PyResult<InitialConditionPolicy> {
    text.parse().map_err(to_py)
}

/// A validated closed-loop scenario.
#[pyclass(frozen, skip_from_py_object, module = "parkloop")]
#[derive(Clone)]
struct Scenario {
    inner: parkloop_core::Scenario,
}

#[pymethods]
impl Scenario {
    /// The bundled two-suburb, two-class scenario.
    #[staticmethod]
    fn paper() -> Self {
        Scenario {
            inner: scenario_io::paper_scenario(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = scenario_io::parse_scenario(text).map_err(to_py)?;
        Ok(Scenario { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| PyRuntimeError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn to_toml(&self) -> String {
        scenario_io::to_toml(&self.inner)
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn with_ic_policy(&self, ic_policy: &str) -> PyResult<Self> {
        let inner = self.inner.clone().with_ic_policy(policy(ic_policy)?).map_err(to_py)?;
        Ok(Scenario { inner })
    }

    #[getter]
    fn suburb_count(&self) -> usize {
        self.inner.suburb_count()
    }

    #[getter]
    fn driver_count(&self) -> usize {
        self.inner.driver_count()
    }

    #[getter]
    fn references(&self) -> Vec<f64> {
        self.inner.references().to_vec()
    }

    #[getter]
    fn profile_names(&self) -> Vec<String> {
        self.inner.profiles().iter().map(|p| p.name().to_string()).collect()
    }

    #[getter]
    fn ic_policy(&self) -> String {
        self.inner.ic_policy().to_string()
    }

    /// Choice probabilities `[p_1, …, p_M, p_City]` of one profile.
    fn choice_probabilities(&self, profile: usize, incentives: Vec<f64>) -> PyResult<Vec<f64>> {
        let p = self
            .inner
            .profiles()
            .get(profile)
            .ok_or_else(|| PyValueError::new_err(format!("no profile {profile}")))?;
        Ok(p.choice_probabilities(&incentives).map_err(to_py)?.into_vec())
    }

    /// `(controller radii, filter radii)`.
    fn spectral_radii(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.inner.controllers().spectral_radii(),
            self.inner.filters().spectral_radii(),
        )
    }

    fn stability_violations(&self) -> Vec<String> {
        self.inner.stability_violations()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(suburbs={}, drivers={}, digest={})",
            self.inner.suburb_count(),
            self.inner.driver_count(),
            &self.inner.digest()[..12]
        )
    }
}

/// Per-step ensemble means and standard deviations.
#[pyclass(frozen, module = "parkloop")]
struct EnsembleStats {
    inner: parkloop_core::EnsembleStats,
    index: HashMap<String, Quantity>,
}

impl EnsembleStats {
    fn quantity(&self, name: &str) -> PyResult<Quantity> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| PyKeyError::new_err(name.to_string()))
    }
}

#[pymethods]
impl EnsembleStats {
    #[getter]
    fn runs(&self) -> usize {
        self.inner.runs
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    /// Names of the tracked series, e.g. `total_suburb_1`, `pi_2`.
    fn names(&self) -> Vec<String> {
        self.inner.quantities.iter().map(|q| self.inner.name(*q)).collect()
    }

    fn mean(&self, name: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.mean(self.quantity(name)?).unwrap().to_vec())
    }

    fn std(&self, name: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.std(self.quantity(name)?).unwrap().to_vec())
    }

    /// Mean over steps `[start, end)` of the ensemble mean.
    fn window_mean(&self, name: &str, start: usize, end: usize) -> PyResult<f64> {
        self.inner
            .window_mean(self.quantity(name)?, start..end)
            .ok_or_else(|| PyValueError::new_err(format!("window [{start}, {end}) is outside 0..{}", self.inner.steps)))
    }

    /// Writes the CSV bundle for this ensemble; returns the file names.
    #[pyo3(signature = (scenario, directory, svg = false))]
    fn emit(&self, scenario: &Scenario, directory: PathBuf, svg: bool) -> PyResult<Vec<String>> {
        let options = EmitOptions { svg, per_run: None };
        let bundle = scenario_io::emit(Outputs::Ensemble(&self.inner), &scenario.inner, &directory, &options)
            .map_err(to_py)?;
        Ok(bundle.files)
    }

    fn __repr__(&self) -> String {
        format!(
            "EnsembleStats(runs={}, steps={}, master_seed={})",
            self.inner.runs, self.inner.steps, self.inner.master_seed
        )
    }
}

/// One run. Returns a dict of per-step lists: `filtered`, `error`,
/// `incentives`, `counts` (`[k][profile][location]`) and `totals`.
#[pyfunction]
fn simulate(py: Python<'_>, scenario: &Scenario, steps: usize, seed: u64) -> PyResult<HashMap<String, Py<PyAny>>> {
    let r = py.detach(|| parkloop_core::run(&scenario.inner, steps, seed)).map_err(to_py)?;
    let totals: Vec<Vec<u64>> = (0..r.steps()).map(|k| r.totals(k)).collect();
    let mut out = HashMap::new();
    out.insert("filtered".to_string(), r.filtered.into_pyobject(py)?.into_any().unbind());
    out.insert("error".to_string(), r.error.into_pyobject(py)?.into_any().unbind());
    out.insert("incentives".to_string(), r.incentives.into_pyobject(py)?.into_any().unbind());
    out.insert("counts".to_string(), r.counts.into_pyobject(py)?.into_any().unbind());
    out.insert("totals".to_string(), totals.into_pyobject(py)?.into_any().unbind());
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (scenario, runs, steps, seed, ic_policy = None, allow_unstable = false))]
fn ensemble(
    py: Python<'_>,
    scenario: &Scenario,
    runs: usize,
    steps: usize,
    seed: u64,
    ic_policy: Option<&str>,
    allow_unstable: bool,
) -> PyResult<EnsembleStats> {
    let mut config = EnsembleConfig::new(runs, steps, seed);
    if let Some(p) = ic_policy {
        config = config.with_ic_policy(policy(p)?);
    }
    if allow_unstable {
        config = config.allow_unstable();
    }
    let inner = py.detach(|| run_ensemble(&scenario.inner, &config)).map_err(to_py)?;
    let index = inner.quantities.iter().map(|q| (inner.name(*q), *q)).collect();
    Ok(EnsembleStats { inner, index })
}

/// Mean-field prediction as a dict with `incentives`, `errors`, `totals`,
/// `counts`, `dc_gains`, `residual` and `iterations`.
#[pyfunction]
#[pyo3(signature = (scenario, tolerance = 1e-12))]
fn fixed_point(py: Python<'_>, scenario: &Scenario, tolerance: f64) -> PyResult<HashMap<String, Py<PyAny>>> {
    let fp = parkloop_core::fixed_point(&scenario.inner, tolerance).map_err(to_py)?;
    let mut out = HashMap::new();
    out.insert("incentives".to_string(), fp.incentives.into_pyobject(py)?.into_any().unbind());
    out.insert("errors".to_string(), fp.errors.into_pyobject(py)?.into_any().unbind());
    out.insert("totals".to_string(), fp.totals.into_pyobject(py)?.into_any().unbind());
    out.insert("counts".to_string(), fp.counts.into_pyobject(py)?.into_any().unbind());
    out.insert("dc_gains".to_string(), fp.dc_gains.into_pyobject(py)?.into_any().unbind());
    out.insert("residual".to_string(), fp.residual.into_pyobject(py)?.into_any().unbind());
    out.insert("iterations".to_string(), fp.iterations.into_pyobject(py)?.into_any().unbind());
    Ok(out)
}

/// Returns `(passed, max_difference, report_text)`.
#[pyfunction]
#[pyo3(signature = (scenario, runs, steps, seed, policies = ("all-city", "all-suburb-1"), window = 100, tolerance = 1.0))]
#[allow(clippy::too_many_arguments)]
fn ergodicity(
    py: Python<'_>,
    scenario: &Scenario,
    runs: usize,
    steps: usize,
    seed: u64,
    policies: (&str, &str),
    window: usize,
    tolerance: f64,
) -> PyResult<(bool, f64, String)> {
    let pair = [policy(policies.0)?, policy(policies.1)?];
    let config = EnsembleConfig::new(runs, steps, seed);
    let report = py
        .detach(|| parkloop_core::ergodicity_check(&scenario.inner, &config, pair, window, tolerance))
        .map_err(to_py)?;
    Ok((report.passed, report.max_difference(), report.to_string()))
}

#[pymodule]
fn parkloop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Scenario>()?;
    m.add_class::<EnsembleStats>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(ergodicity, m)?)?;
    Ok(())
}
