use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aoi_sampler::acceptance::{self, Settings};
use aoi_sampler::delay::DelayDistribution;
use aoi_sampler::oracle::{self, DEFAULT_TOL};
use aoi_sampler::output::{self, ensemble_json, metadata, write_json};
use aoi_sampler::scenario::{run_scenario, Scenario};
use aoi_sampler::simulator::{self, BoundsMode, EnsembleOptions, RunConfig};
use aoi_sampler::{DelayModel, Error, PolicySpec, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "aoi-sampler",
    version,
    about = "Age-of-information sampling: oracle, online learner, simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the known-distribution optimum and print it as JSON.
    Oracle {
        /// Delay model: JSON or shorthand such as `uniform:0,1`, `lognormal:1,1.3,auto`.
        #[arg(long)]
        model: String,
        /// Maximum sampling frequency; omit for no constraint.
        #[arg(long)]
        fmax: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// Also write `oracle_curve.csv` with this many (beta, AoI) grid points.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one run and write its trajectory.
    Simulate(RunArgs),
    /// Run independent replications and aggregate them.
    Ensemble(RunArgs),
    /// Run a built-in experiment scenario for all of its policies.
    Scenario {
        /// Scenario name; `list` prints the available names.
        name: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        cycles: Option<u64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        serial: bool,
    },
    /// Run the acceptance criteria; exits 0 iff all pass.
    Acceptance {
        /// Criterion id, tag, or name substring.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        serial: bool,
        /// Multiplies the MSE experiment's step sizes (mutation check).
        #[arg(long, default_value_t = 1.0, hide = true)]
        step_scale: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Policy: JSON or `online[:V]`, `zero_wait`, `constant_wait[:w]`, `oracle[:beta]`, `plugin[:every,min]`.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    cycles: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fmax: Option<f64>,
    /// Estimate moment bounds from this many warmup delays instead of using exact moments.
    #[arg(long)]
    warmup: Option<usize>,
    /// Keep every n-th cycle in the trajectory CSV.
    #[arg(long)]
    record_every: Option<u64>,
    /// Comma-separated checkpoint cycle indices for ensembles.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    serial: bool,
}

/// On-disk experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: DelayModel,
    #[serde(default)]
    policy: Option<PolicySpec>,
    #[serde(default)]
    cycles: Option<u64>,
    #[serde(default)]
    f_max: Option<f64>,
    #[serde(default)]
    inv_f_max: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    bounds: Option<BoundsMode>,
    #[serde(default)]
    record_every: Option<u64>,
    #[serde(default)]
    wait_cap: Option<f64>,
    #[serde(default)]
    runs: Option<usize>,
    #[serde(default)]
    checkpoints: Option<Vec<u64>>,
}

#[derive(Serialize)]
struct Resolved {
    #[serde(flatten)]
    run: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoints: Option<Vec<u64>>,
}

const DEFAULT_CYCLES: u64 = 10_000;
const DEFAULT_RUNS: usize = 100;

fn inv_rate(f_max: f64) -> Result<f64> {
    oracle::inverse_rate(f_max)
}

fn resolve(args: &RunArgs) -> Result<Resolved> {
    let file: Option<ConfigFile> = match &args.config {
        Some(path) => Some(serde_json::from_str(&fs::read_to_string(path)?)?),
        None => None,
    };
    let model = match (&args.model, &file) {
        (Some(m), _) => m.parse::<DelayModel>()?,
        (None, Some(f)) => f.model.clone(),
        (None, None) => {
            return Err(Error::InvalidParameter(
                "--model or --config is required".into(),
            ))
        }
    };
    let policy = match (&args.policy, file.as_ref().and_then(|f| f.policy.clone())) {
        (Some(p), _) => p.parse()?,
        (None, Some(p)) => p,
        (None, None) => PolicySpec::online(),
    };
    let file_inv = match &file {
        Some(ConfigFile {
            inv_f_max: Some(_),
            f_max: Some(_),
            ..
        }) => {
            return Err(Error::InvalidParameter(
                "give f_max or inv_f_max, not both".into(),
            ))
        }
        Some(ConfigFile {
            inv_f_max: Some(inv),
            ..
        }) => Some(*inv),
        Some(ConfigFile { f_max: Some(f), .. }) => Some(inv_rate(*f)?),
        _ => None,
    };
    let inv_f_max = match args.fmax {
        Some(f) => inv_rate(f)?,
        None => file_inv.unwrap_or(0.0),
    };
    let pick = |flag: Option<u64>, from_file: Option<u64>, default: u64| {
        flag.or(from_file).unwrap_or(default)
    };
    let f = file.as_ref();
    let bounds = match args.warmup {
        Some(n) => BoundsMode::Estimated { warmup_n: n },
        None => f.and_then(|f| f.bounds).unwrap_or_default(),
    };
    let run = RunConfig {
        model,
        policy,
        cycles: pick(args.cycles, f.and_then(|f| f.cycles), DEFAULT_CYCLES),
        inv_f_max,
        seed: pick(args.seed, f.and_then(|f| f.seed), 1),
        bounds,
        record_every: pick(args.record_every, f.and_then(|f| f.record_every), 1),
        wait_cap: f.and_then(|f| f.wait_cap),
    };
    run.validate()?;
    Ok(Resolved {
        run,
        runs: args.runs.or(f.and_then(|f| f.runs)),
        checkpoints: args
            .checkpoints
            .clone()
            .or(f.and_then(|f| f.checkpoints.clone())),
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn emit(out: Option<&Path>, name: &str, value: &serde_json::Value) -> Result<()> {
    match out {
        Some(dir) => write_json(create(dir, name)?, value),
        None => write_json(io::stdout().lock(), value),
    }
}

fn cmd_oracle(
    model: &str,
    fmax: Option<f64>,
    tol: f64,
    grid: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let model: DelayModel = model.parse()?;
    let f_max = fmax.unwrap_or(f64::INFINITY);
    let solution = oracle::solve_constrained(&model, f_max, tol)?;
    let m = model.moments();
    let bounds = oracle::gamma_bounds(m.mean, m.mean, m.second_moment, m.second_moment, f_max)?;
    let config = json!({ "model": model, "f_max": fmax, "tol": tol });
    let value = json!({
        "metadata": metadata("oracle", &config)?,
        "moments": m,
        "gamma_bounds": bounds,
        "solution": solution,
        "gamma_star": solution.gamma_star,
        "beta": solution.beta,
        "aoi_star": solution.aoi_star,
    });
    if let (Some(points), Some(dir)) = (grid, out) {
        let beta_max = 3.0 * solution.beta.max(m.mean);
        let mut w = csv::Writer::from_writer(create(dir, "oracle_curve.csv")?);
        w.write_record(["beta", "aoi"])?;
        for (b, a) in oracle::aoi_curve(&model, beta_max, points) {
            w.write_record([b.to_string(), a.to_string()])?;
        }
        w.flush()?;
    }
    emit(out, "oracle.json", &value)
}

fn cmd_simulate(args: &RunArgs) -> Result<()> {
    let resolved = resolve(args)?;
    let run = simulator::run(&resolved.run)?;
    let t = &run.trajectory;
    let horizon = t.horizon();
    let value = json!({
        "metadata": metadata("simulate", &resolved)?,
        "result": {
            "cycles": t.len(),
            "aoi_ratio": t.aoi_ratio()?,
            "time_avg_aoi": if horizon > 0.0 { Some(t.time_average_aoi(horizon)?) } else { None },
            "mean_interval": t.mean_interval()?,
            "horizon": horizon,
            "final_state": run.final_state,
            "threshold": run.threshold,
            "moment_bounds": run.bounds,
            "sampler_window": run.window,
            "wait_cap_exceedances": run.wait_cap_exceedances,
        },
    });
    if let Some(dir) = &args.out {
        t.write_csv(create(dir, "trajectory.csv")?, resolved.run.record_every)?;
    }
    emit(args.out.as_deref(), "summary.json", &value)
}

fn cmd_ensemble(args: &RunArgs) -> Result<()> {
    let mut resolved = resolve(args)?;
    let runs = resolved.runs.unwrap_or(DEFAULT_RUNS);
    resolved.runs = Some(runs);
    let options = EnsembleOptions {
        runs,
        checkpoints: resolved.checkpoints.clone(),
        parallel: !args.serial,
    };
    let summary = simulator::ensemble(&resolved.run, &options)?;
    if let Some(dir) = &args.out {
        output::write_ensemble_csv(create(dir, "ensemble.csv")?, &summary)?;
        output::write_final_values_csv(create(dir, "final.csv")?, &summary)?;
    }
    emit(
        args.out.as_deref(),
        "summary.json",
        &ensemble_json("ensemble", &resolved, &summary)?,
    )
}

fn cmd_scenario(
    name: &str,
    runs: Option<usize>,
    cycles: Option<u64>,
    seed: u64,
    out: Option<&Path>,
    serial: bool,
) -> Result<()> {
    if name == "list" {
        for s in Scenario::all() {
            println!("{:<36} {}", s.name, s.description);
        }
        return Ok(());
    }
    let scenario = Scenario::by_name(name)?;
    let runs = runs.unwrap_or(scenario.runs);
    let cycles = cycles.unwrap_or(scenario.cycles);
    let report = run_scenario(&scenario, runs, cycles, seed, !serial)?;
    if let Some(dir) = out {
        let mut w = csv::Writer::from_writer(create(dir, &format!("{name}_ensemble.csv"))?);
        w.write_record(["policy", "checkpoint", "metric", "mean", "ci_half_width"])?;
        for r in &report.results {
            for m in &r.summary.metrics {
                for (i, c) in r.summary.checkpoints.iter().enumerate() {
                    w.write_record([
                        r.label.clone(),
                        c.to_string(),
                        m.metric.name().to_string(),
                        m.mean[i].to_string(),
                        m.ci_half_width[i].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        // One sample path per policy, on the ensemble's first seed.
        let every = (cycles / 1000).max(1);
        for (i, policy) in report.scenario.policies.iter().enumerate() {
            let mut config =
                report
                    .scenario
                    .run_config(policy, cycles, simulator::derive_seed(seed, 0));
            config.record_every = every;
            let path = simulator::run(&config)?;
            path.trajectory.write_csv(
                create(dir, &format!("{name}_path_{i}_{}.csv", policy.name()))?,
                every,
            )?;
        }
    }
    let value = json!({
        "metadata": metadata("scenario", &json!({ "name": name, "runs": runs, "cycles": cycles, "seed": seed }))?,
        "report": report,
    });
    emit(out, &format!("{name}_summary.json"), &value)
}

fn cmd_acceptance(filter: Option<&str>, serial: bool, step_scale: f64) -> Result<bool> {
    let settings = Settings {
        step_scale,
        parallel: !serial,
        ..Settings::default()
    };
    let mut stdout = io::stdout().lock();
    let mut all_ok = true;
    let mut count = 0;
    for c in acceptance::criteria()
        .into_iter()
        .filter(|c| filter.is_none_or(|f| c.matches(f)))
    {
        let outcome = c.run(&settings);
        writeln!(stdout, "{outcome}")?;
        all_ok &= outcome.ok();
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidParameter(format!(
            "no criterion matches {filter:?}"
        )));
    }
    writeln!(
        stdout,
        "{}: {count} criteria",
        if all_ok { "ALL PASS" } else { "FAILURES" }
    )?;
    Ok(all_ok)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Oracle {
            model,
            fmax,
            tol,
            grid,
            out,
        } => cmd_oracle(&model, fmax, tol, grid, out.as_deref())?,
        Command::Simulate(args) => cmd_simulate(&args)?,
        Command::Ensemble(args) => cmd_ensemble(&args)?,
        Command::Scenario {
            name,
            runs,
            cycles,
            seed,
            out,
            serial,
        } => cmd_scenario(&name, runs, cycles, seed, out.as_deref(), serial)?,
        Command::Acceptance {
            filter,
            serial,
            step_scale,
        } => {
            if !cmd_acceptance(filter.as_deref(), serial, step_scale)? {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            let _ = io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
