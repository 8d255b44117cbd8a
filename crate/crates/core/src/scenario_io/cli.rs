//! The `parkloop` command line.
//!
//! Exit codes: 0 success, 1 validation or usage failure (including an
//! unstable scenario or a failed ergodicity check), 2 runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::format::{parse_scenario_document, to_toml, ScenarioDocument};
use super::output::{emit, EmitOptions, Outputs};
use super::paper::{PAPER_RUNS, PAPER_SCENARIO_TOML, PAPER_SEED, PAPER_STEPS};
use crate::ensemble::{
    ergodicity_check, fixed_point, run_ensemble, run_ensemble_retaining, EnsembleConfig, EnsembleStats,
    Quantity,
};
use crate::error::{Error, Result};
use crate::feedback_loop::{run, InitialConditionPolicy, Scenario};

pub const OUT_DIR_ENV: &str = "PARKLOOP_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "parkloop", version, about = "Closed-loop incentive regulation of parking choice")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a single run and write its series.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        policy: PolicyArg,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a Monte Carlo ensemble and write mean and std series.
    Ensemble {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        #[command(flatten)]
        policy: PolicyArg,
        #[command(flatten)]
        out: OutArgs,
        /// Also write one column per run.
        #[arg(long)]
        per_run: bool,
        /// Run even if a controller or filter is unstable.
        #[arg(long)]
        allow_unstable: bool,
    },
    /// Print spectral radii, DC gains and stability verdicts per channel.
    CheckStability {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Print the mean-field fixed-point prediction.
    Oracle {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
    },
    /// Compare late-window ensemble means under two initial-condition policies.
    Ergodicity {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[command(flatten)]
        ensemble: EnsembleArgs,
        /// Two comma-separated policies.
        #[arg(long, default_value = "all-city,all-suburb-1")]
        policies: String,
        /// Number of final steps averaged.
        #[arg(long, default_value_t = 100)]
        window: usize,
        #[arg(long, default_value_t = 1.0)]
        tolerance: f64,
    },
    /// Reproduce the bundled two-suburb experiment end to end.
    Paper {
        #[arg(long, default_value_t = PAPER_RUNS)]
        runs: usize,
        #[arg(long, default_value_t = PAPER_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = PAPER_SEED)]
        seed: u64,
        #[command(flatten)]
        policy: PolicyArg,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the canonical form of a scenario.
    Scenario {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
}

#[derive(Args, Debug)]
struct ScenarioArg {
    /// Scenario file; the bundled reference scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct PolicyArg {
    /// Override the initial-condition policy: random-simplex, all-city or all-suburb-J.
    #[arg(long)]
    ic_policy: Option<String>,
}

#[derive(Args, Debug)]
struct OutArgs {
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    out: PathBuf,
    /// Also render SVG charts.
    #[arg(long)]
    svg: bool,
}

enum Outcome {
    Ok,
    Rejected,
}

fn load(path: Option<&Path>) -> Result<ScenarioDocument> {
    match path {
        None => parse_scenario_document(PAPER_SCENARIO_TOML),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_scenario_document(&text).map_err(|e| match e {
                Error::Validation(v) => {
                    Error::Validation(v.into_iter().map(|m| format!("{}: {m}", p.display())).collect())
                }
                Error::Syntax(m) => Error::Syntax(format!("{}: {m}", p.display())),
                other => other,
            })
        }
    }
}

fn apply_policy(scenario: Scenario, policy: &PolicyArg) -> Result<Scenario> {
    match &policy.ic_policy {
        Some(p) => scenario.with_ic_policy(p.parse()?),
        None => Ok(scenario),
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::validation("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Numeric(format!("cannot start thread pool: {e}")))?
            .install(f),
    }
}

fn ensemble_config(doc: &ScenarioDocument, args: &EnsembleArgs) -> EnsembleConfig {
    EnsembleConfig::new(
        args.runs.or(doc.run.runs).unwrap_or(PAPER_RUNS),
        args.steps.or(doc.run.steps).unwrap_or(PAPER_STEPS),
        args.seed.or(doc.run.seed).unwrap_or(PAPER_SEED),
    )
}

fn late_window(steps: usize) -> std::ops::Range<usize> {
    steps.saturating_sub(100)..steps
}

fn compare_with_oracle(scenario: &Scenario, stats: &EnsembleStats) -> Result<()> {
    let fp = fixed_point(scenario, 1e-12)?;
    let w = late_window(stats.steps);
    println!("late-window means over k in [{}, {}) against the mean-field fixed point:", w.start, w.end);
    println!("  {:<20} {:>14} {:>14} {:>10}", "quantity", "ensemble", "fixed point", "diff");
    let m = scenario.suburb_count();
    let mut rows = Vec::new();
    for j in 0..m {
        rows.push((Quantity::Total(j), fp.totals[j]));
        rows.push((Quantity::Error(j), fp.errors[j]));
        rows.push((Quantity::Incentive(j), fp.incentives[j]));
    }
    rows.push((Quantity::Total(m), fp.totals[m]));
    for (q, target) in rows {
        let mean = stats.window_mean(q, w.clone()).expect("window within steps");
        println!(
            "  {:<20} {:>14.6} {:>14.6} {:>+10.4}",
            stats.name(q),
            mean,
            target,
            mean - target
        );
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Simulate {
            scenario,
            steps,
            seed,
            policy,
            out,
        } => {
            let doc = load(scenario.scenario.as_deref())?;
            let s = apply_policy(doc.scenario, &policy)?;
            let steps = steps.or(doc.run.steps).unwrap_or(PAPER_STEPS);
            let seed = seed.or(doc.run.seed).unwrap_or(PAPER_SEED);
            let r = run(&s, steps, seed)?;
            let bundle = emit(Outputs::Run(&r), &s, &out.out, &EmitOptions { svg: out.svg, per_run: None })?;
            let last = steps - 1;
            println!("simulated {steps} steps (seed {seed}); final state:");
            for q in Quantity::layout(&s) {
                println!("  {:<28} {}", q.name(r.suburbs, &r.profile_names), q.value(&r, last));
            }
            println!("wrote {} files to {}", bundle.files.len(), bundle.directory.display());
        }
        Command::Ensemble {
            scenario,
            ensemble,
            policy,
            out,
            per_run,
            allow_unstable,
        } => {
            let doc = load(scenario.scenario.as_deref())?;
            let mut config = ensemble_config(&doc, &ensemble);
            if allow_unstable {
                config = config.allow_unstable();
            }
            let s = apply_policy(doc.scenario, &policy)?;
            let bundle = in_pool(ensemble.threads, || {
                if per_run {
                    let (stats, runs) = run_ensemble_retaining(&s, &config)?;
                    println!("{stats}");
                    emit(
                        Outputs::Ensemble(&stats),
                        &s,
                        &out.out,
                        &EmitOptions {
                            svg: out.svg,
                            per_run: Some(&runs),
                        },
                    )
                } else {
                    let stats = run_ensemble(&s, &config)?;
                    println!("{stats}");
                    emit(Outputs::Ensemble(&stats), &s, &out.out, &EmitOptions { svg: out.svg, per_run: None })
                }
            })?;
            println!("wrote {} files to {}", bundle.files.len(), bundle.directory.display());
        }
        Command::CheckStability { scenario } => {
            let doc = load(scenario.scenario.as_deref())?;
            let s = doc.scenario;
            let report = |kind: &str, specs: &[crate::lti_blocks::BlockSpec], radii: Vec<f64>, gains: Vec<f64>| {
                for (j, (spec, rho)) in specs.iter().zip(radii).enumerate() {
                    let gain = gains.get(j).map_or("undefined".to_string(), |g| format!("{g:.6}"));
                    println!(
                        "{kind} channel {}: {:<14} spectral radius {rho:.12}  dc gain {gain}  {}",
                        j + 1,
                        spec.kind(),
                        if rho < 1.0 - crate::lti_blocks::STABILITY_MARGIN { "stable" } else { "UNSTABLE" }
                    );
                }
            };
            report(
                "controller",
                s.controllers().specs(),
                s.controllers().spectral_radii(),
                s.controllers().dc_gains().unwrap_or_default(),
            );
            report(
                "filter",
                s.filters().specs(),
                s.filters().spectral_radii(),
                s.filters().dc_gains().unwrap_or_default(),
            );
            let violations = s.stability_violations();
            if violations.is_empty() {
                println!("verdict: stable");
            } else {
                println!("verdict: UNSTABLE");
                for v in &violations {
                    println!("  {v}");
                }
                return Ok(Outcome::Rejected);
            }
        }
        Command::Oracle { scenario, tolerance } => {
            let doc = load(scenario.scenario.as_deref())?;
            print!("{}", fixed_point(&doc.scenario, tolerance)?);
        }
        Command::Ergodicity {
            scenario,
            ensemble,
            policies,
            window,
            tolerance,
        } => {
            let doc = load(scenario.scenario.as_deref())?;
            let config = ensemble_config(&doc, &ensemble);
            let parsed: Vec<InitialConditionPolicy> =
                policies.split(',').map(str::parse).collect::<Result<_>>()?;
            let [a, b]: [InitialConditionPolicy; 2] = parsed
                .try_into()
                .map_err(|_| Error::validation("--policies takes exactly two comma-separated policies"))?;
            let r = in_pool(ensemble.threads, || ergodicity_check(&doc.scenario, &config, [a, b], window, tolerance))?;
            print!("{r}");
            if !r.passed {
                return Ok(Outcome::Rejected);
            }
        }
        Command::Paper {
            runs,
            steps,
            seed,
            policy,
            out,
            threads,
        } => {
            let doc = load(None)?;
            let s = apply_policy(doc.scenario, &policy)?;
            let config = EnsembleConfig::new(runs, steps, seed);
            let started = std::time::Instant::now();
            let stats = in_pool(threads, || run_ensemble(&s, &config))?;
            let elapsed = started.elapsed();
            let bundle = emit(Outputs::Ensemble(&stats), &s, &out.out, &EmitOptions { svg: out.svg, per_run: None })?;
            println!(
                "{runs} runs x {steps} steps (master seed {seed}, ic policy {}) in {:.2} s",
                s.ic_policy(),
                elapsed.as_secs_f64()
            );
            compare_with_oracle(&s, &stats)?;
            println!("wrote {} files to {}", bundle.files.len(), bundle.directory.display());
        }
        Command::Scenario { scenario } => {
            let doc = load(scenario.scenario.as_deref())?;
            print!("{}", to_toml(&doc.scenario));
        }
    }
    Ok(Outcome::Ok)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(parsed) {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::Rejected) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
