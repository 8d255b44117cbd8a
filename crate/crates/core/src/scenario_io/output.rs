//! CSV bundles and manifests.
//!
//! Every bundle has one CSV per plotted series:
//!
//! | file                  | columns (ensemble)                                   | columns (single run)      |
//! |-----------------------|------------------------------------------------------|---------------------------|
//! | `counts_suburb_J.csv` | `k`, `<profile>_mean`, `<profile>_std`, …, `total_*` | `k`, `<profile>`, …, `total` |
//! | `incentive_J.csv`     | `k`, `mean`, `std`                                   | `k`, `value`              |
//! | `error_J.csv`         | `k`, `mean`, `std`                                   | `k`, `value`              |
//!
//! plus `all_series.csv` (every tracked quantity), `scenario.toml` and
//! `manifest.json`. Ensembles emitted with retained runs get extra
//! `<column>_runI` columns. Floats are written as `{:.16e}` (17 significant
//! digits); nothing in a bundle depends on time or thread count.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::format::{to_toml_with_settings, RunSettings};
use super::svg::{self, Series};
use crate::ensemble::{EnsembleStats, Quantity};
use crate::error::{Error, Result};
use crate::feedback_loop::{InitialConditionPolicy, Scenario, SimulationRun};

pub const MANIFEST_FILE: &str = "manifest.json";

pub const SEED_RULE: &str = "run i draws from ChaCha8Rng::seed_from_u64(master_seed) on stream i";

pub enum Outputs<'a> {
    Ensemble(&'a EnsembleStats),
    Run(&'a SimulationRun),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EmitOptions<'a> {
    pub svg: bool,
    /// Individual runs of an ensemble, in run order.
    pub per_run: Option<&'a [SimulationRun]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputBundle {
    pub directory: PathBuf,
    /// Relative file names, sorted.
    pub files: Vec<String>,
}

impl OutputBundle {
    pub fn path(&self, file: &str) -> PathBuf {
        self.directory.join(file)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    kind: &'a str,
    scenario_digest: String,
    master_seed: u64,
    seed_rule: &'a str,
    runs: usize,
    steps: usize,
    suburbs: usize,
    profiles: Vec<String>,
    ic_policy: String,
    ic_policy_note: &'a str,
    decimation: usize,
    files: Vec<String>,
}

fn policy_note(policy: &InitialConditionPolicy) -> &'static str {
    match policy {
        InitialConditionPolicy::RandomSimplex => {
            "per run and profile, initial location probabilities are drawn uniformly on the simplex \
             (normalised Exp(1) variates); each driver then draws its first location from them"
        }
        InitialConditionPolicy::AllCity => "every driver starts in the City",
        InitialConditionPolicy::AllSuburb(_) => "every driver starts in the named suburb",
        InitialConditionPolicy::Fixed(_) => "initial location probabilities are given in scenario.toml",
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(steps: usize) -> Self {
        Table {
            header: vec!["k".into()],
            rows: (0..steps).map(|k| vec![k.to_string()]).collect(),
        }
    }

    fn column(&mut self, name: String, values: impl IntoIterator<Item = String>) {
        self.header.push(name);
        let mut n = 0;
        for (row, v) in self.rows.iter_mut().zip(values) {
            row.push(v);
            n += 1;
        }
        debug_assert_eq!(n, self.rows.len());
    }

    fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

struct Figure {
    stem: String,
    title: String,
    y_label: &'static str,
    /// (column prefix, quantity); an empty prefix gives plain `mean`/`std`.
    columns: Vec<(String, Quantity)>,
}

fn figures(suburbs: usize, profile_names: &[String]) -> Vec<Figure> {
    let mut out = Vec::new();
    for j in 0..suburbs {
        let mut columns: Vec<(String, Quantity)> = profile_names
            .iter()
            .enumerate()
            .map(|(p, name)| (name.clone(), Quantity::Count { profile: p, location: j }))
            .collect();
        columns.push(("total".into(), Quantity::Total(j)));
        out.push(Figure {
            stem: format!("counts_suburb_{}", j + 1),
            title: format!("drivers parked in suburb {}", j + 1),
            y_label: "drivers",
            columns,
        });
    }
    for j in 0..suburbs {
        out.push(Figure {
            stem: format!("incentive_{}", j + 1),
            title: format!("incentive pi_{} (controller {} output)", j + 1, j + 1),
            y_label: "incentive",
            columns: vec![(String::new(), Quantity::Incentive(j))],
        });
    }
    for j in 0..suburbs {
        out.push(Figure {
            stem: format!("error_{}", j + 1),
            title: format!("error e_{} (controller {} input)", j + 1, j + 1),
            y_label: "error",
            columns: vec![(String::new(), Quantity::Error(j))],
        });
    }
    out
}

fn prefixed(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}_{name}")
    }
}

/// Writes a bundle for an ensemble or a single run into `dir`.
pub fn emit(outputs: Outputs<'_>, scenario: &Scenario, dir: &Path, options: &EmitOptions<'_>) -> Result<OutputBundle> {
    let mut w = Writer::new(dir)?;
    let (suburbs, names, steps) = match &outputs {
        Outputs::Ensemble(s) => (s.suburbs, s.profile_names.clone(), s.steps),
        Outputs::Run(r) => (r.suburbs, r.profile_names.clone(), r.steps()),
    };
    if suburbs != scenario.suburb_count() || names.len() != scenario.profiles().len() {
        return Err(Error::validation("outputs do not belong to the given scenario"));
    }
    let layout = Quantity::layout_for(suburbs, names.len());
    let per_run = match (&outputs, options.per_run) {
        (Outputs::Ensemble(s), Some(runs)) => {
            if runs.len() != s.runs || runs.iter().any(|r| r.steps() != steps) {
                return Err(Error::validation("retained runs do not match the ensemble statistics"));
            }
            runs
        }
        _ => &[],
    };

    for fig in figures(suburbs, &names) {
        let mut table = Table::new(steps);
        let mut series = Vec::new();
        for (prefix, q) in &fig.columns {
            match &outputs {
                Outputs::Ensemble(s) => {
                    let mean = s.mean(*q).expect("quantity in layout");
                    let std = s.std(*q).expect("quantity in layout");
                    table.column(prefixed(prefix, "mean"), mean.iter().map(|&v| fmt_f64(v)));
                    table.column(prefixed(prefix, "std"), std.iter().map(|&v| fmt_f64(v)));
                    series.push((prefix.clone(), mean.to_vec(), Some(std.to_vec())));
                }
                Outputs::Run(r) => {
                    let values: Vec<f64> = (0..steps).map(|k| q.value(r, k)).collect();
                    let name = if prefix.is_empty() { "value" } else { prefix.as_str() };
                    if matches!(q, Quantity::Count { .. } | Quantity::Total(_)) {
                        table.column(name.to_string(), values.iter().map(|&v| (v as u64).to_string()));
                    } else {
                        table.column(name.to_string(), values.iter().map(|&v| fmt_f64(v)));
                    }
                    series.push((prefix.clone(), values, None));
                }
            }
        }
        for (prefix, q) in &fig.columns {
            for (i, run) in per_run.iter().enumerate() {
                table.column(
                    prefixed(prefix, &format!("run{i}")),
                    (0..steps).map(|k| fmt_f64(q.value(run, k))),
                );
            }
        }
        w.write(&format!("{}.csv", fig.stem), &table.render())?;
        if options.svg {
            let series: Vec<Series<'_>> = series
                .iter()
                .map(|(label, mean, std)| Series {
                    label: if label.is_empty() { "mean" } else { label },
                    mean,
                    std: std.as_deref(),
                })
                .collect();
            w.write(&format!("{}.svg", fig.stem), &svg::render(&fig.title, fig.y_label, &series))?;
        }
    }

    let mut all = Table::new(steps);
    for q in &layout {
        let name = q.name(suburbs, &names);
        match &outputs {
            Outputs::Ensemble(s) => {
                all.column(format!("{name}_mean"), s.mean(*q).unwrap().iter().map(|&v| fmt_f64(v)));
                all.column(format!("{name}_std"), s.std(*q).unwrap().iter().map(|&v| fmt_f64(v)));
            }
            Outputs::Run(r) => all.column(name, (0..steps).map(|k| fmt_f64(q.value(r, k)))),
        }
    }
    w.write("all_series.csv", &all.render())?;

    let (kind, seed, runs) = match &outputs {
        Outputs::Ensemble(s) => ("ensemble", s.master_seed, s.runs),
        Outputs::Run(r) => ("run", r.seed, 1),
    };
    let settings = RunSettings {
        runs: Some(runs),
        steps: Some(steps),
        seed: Some(seed),
    };
    w.write("scenario.toml", &to_toml_with_settings(scenario, settings))?;

    let mut files = w.files.clone();
    files.push(MANIFEST_FILE.to_string());
    files.sort();
    let manifest = Manifest {
        tool: "parkloop",
        version: env!("CARGO_PKG_VERSION"),
        kind,
        scenario_digest: scenario.digest(),
        master_seed: seed,
        seed_rule: SEED_RULE,
        runs,
        steps,
        suburbs,
        profiles: names,
        ic_policy: scenario.ic_policy().to_string(),
        ic_policy_note: policy_note(scenario.ic_policy()),
        decimation: scenario.decimation(),
        files: files.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    w.write(MANIFEST_FILE, &text)?;
    Ok(OutputBundle {
        directory: dir.to_path_buf(),
        files,
    })
}

/// Reads a two-or-more column CSV written by [`emit`] into a header and rows
/// of numbers.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::validation(format!("{}: empty file", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::validation(format!("{}: line {}: {e}", path.display(), i + 2)))?;
        rows.push(row);
    }
    Ok((header, rows))
}
