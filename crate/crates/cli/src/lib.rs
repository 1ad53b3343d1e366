//! Command-line front end: loads a run config, runs one command and writes
//! its tables, report and manifest into `<out>/<command>-seed<seed>/`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chaoslab::dynamics::{
    interacting_sde_run, meanfield_ode_run, meanfield_sde_run, msgld_run, sgd_run, EngineOptions, InitialState, Kind,
    SnapshotPolicy,
};
use chaoslab::experiments::{
    batch_sweep, chaos_rate_study, gamma_sweep, histogram_convergence_study, sgd_sde_consistency_study,
    stationary_study, two_regime_study, Setup, Status, StudyReport, Table, Verdict,
};
use chaoslab::io::manifest::{git_describe, now_rfc3339};
use chaoslab::io::{
    in_section, load_trajectory, save_trajectory, write_trajectory_csv, DerivedValues, RunConfig, RunManifest,
};
use chaoslab::metrics::w2_auto;
use chaoslab::model::check_assumptions;
use chaoslab::{Error, Hyperparams, NoisePlan, Result};
use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "chaoslab", version, about = "Propagation-of-chaos experiments for wide two-layer SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run config; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-run from a manifest's config and seed.
    #[arg(long, global = true, conflicts_with = "config")]
    replay: Option<PathBuf>,
    /// Root seed; overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; overrides CHAOSLAB_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Exit with status 1 when a verdict fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Comma-separated times recorded by `simulate`.
    #[arg(long, global = true, value_delimiter = ',')]
    snapshot_times: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Run one engine and save its trajectory.
    Simulate,
    /// Coupled chaos error across particle counts.
    ChaosRate,
    /// Across-seed deviation for stepsize exponents below and at 1.
    Regime,
    /// Distance to the mean-field limit as the stepsize shrinks.
    GammaSweep,
    /// Distance to the mean-field limit as the batch grows.
    BatchSweep,
    /// Endpoint histograms across particle counts.
    Histograms,
    /// SGD against its diffusion approximation across particle counts.
    Consistency,
    /// Fixed point of the invariant-density map and its stationarity.
    Stationary,
    /// Audit the regularity hypotheses of the model and data.
    CheckAssumptions,
    /// Snapshot-wise W2 between two trajectory files.
    Metrics,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::ChaosRate => "chaos-rate",
            Command::Regime => "regime",
            Command::GammaSweep => "gamma-sweep",
            Command::BatchSweep => "batch-sweep",
            Command::Histograms => "histograms",
            Command::Consistency => "consistency",
            Command::Stationary => "stationary",
            Command::CheckAssumptions => "check-assumptions",
            Command::Metrics => "metrics",
        }
    }

    fn section(self) -> &'static str {
        match self {
            Command::ChaosRate => "chaos_rate",
            Command::GammaSweep => "gamma_sweep",
            Command::BatchSweep => "batch_sweep",
            Command::CheckAssumptions => "check_assumptions",
            other => other.name(),
        }
    }
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(passed) if !passed && cli.strict => EXIT_VERDICT,
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::Parse { .. } | Error::Checksum(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => {
                    EXIT_CONFIG
                }
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<(RunConfig, PathBuf)> {
    if let Some(path) = &cli.replay {
        let manifest = RunManifest::load(path)?;
        if manifest.command != cli.command.name() {
            return Err(Error::Config {
                field: "command".into(),
                message: format!("manifest records `{}`, not `{}`", manifest.command, cli.command.name()),
            });
        }
        let mut config = manifest.config;
        config.seed = manifest.seed;
        return Ok((config, parent_dir(path)));
    }
    match &cli.config {
        Some(path) => Ok((RunConfig::load(path)?, parent_dir(path))),
        None => Ok((RunConfig::default(), PathBuf::from("."))),
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn execute(cli: &Cli) -> Result<bool> {
    let (mut config, base_dir) = load_config(cli)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = Some(workers);
    }
    if let Some(times) = &cli.snapshot_times {
        config.snapshot_times = Some(times.clone());
    }
    config.validate()?;
    let setup = config.model.build(&base_dir)?;
    let root = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("CHAOSLAB_OUT").map(PathBuf::from))
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let dir = root.join(format!("{}-seed{}", cli.command.name(), config.seed));
    std::fs::create_dir_all(&dir)?;

    let manifest = RunManifest {
        command: cli.command.name().into(),
        config: config.clone(),
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        git: git_describe(),
        started: now_rfc3339(),
        finished: String::new(),
        derived: None,
        files: Vec::new(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(workers) = config.workers {
        builder = builder.num_threads(workers);
    }
    let pool = builder.build().map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    let section = cli.command.section();
    let (outcome, derived) = pool
        .install(|| dispatch(cli.command, &config, &setup, &base_dir, &dir))
        .map_err(|e| in_section(section, e))?;

    let (files, passed) = match outcome {
        Outcome::Files(files) => (files, true),
        Outcome::Report(report) => {
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            for v in &report.verdicts {
                println!("{}", verdict_line(v));
            }
            (report.write(&dir)?, report.passed())
        }
    };
    RunManifest { derived, ..manifest }.finish(&dir, &files)?;
    println!("wrote {}", dir.display());
    Ok(passed)
}

enum Outcome {
    Files(Vec<PathBuf>),
    Report(StudyReport),
}

fn derived(setup: &Setup, hyper: &Hyperparams, ns: &[usize]) -> Result<Option<DerivedValues>> {
    DerivedValues::new(setup, hyper, ns).map(Some)
}

fn dispatch(
    command: Command,
    config: &RunConfig,
    setup: &Setup,
    base_dir: &Path,
    dir: &Path,
) -> Result<(Outcome, Option<DerivedValues>)> {
    let seed = config.seed;
    let report = |r: Result<StudyReport>| r.map(Outcome::Report);
    Ok(match command {
        Command::Simulate => {
            let c = &config.simulate;
            (simulate(config, setup, dir)?, derived(setup, &c.hyper, &[c.n])?)
        }
        Command::ChaosRate => {
            let c = &config.chaos_rate;
            (report(chaos_rate_study(setup, c, seed))?, derived(setup, &c.hyper, &c.ns)?)
        }
        Command::Regime => {
            let c = &config.regime;
            (report(two_regime_study(setup, c, seed))?, derived(setup, &c.hyper, &c.ns)?)
        }
        Command::GammaSweep => {
            let c = &config.gamma_sweep;
            (report(gamma_sweep(setup, c, seed))?, derived(setup, &c.hyper, &[c.n])?)
        }
        Command::BatchSweep => {
            let c = &config.batch_sweep;
            (report(batch_sweep(setup, c, seed))?, derived(setup, &c.hyper, &[c.n])?)
        }
        Command::Histograms => {
            let c = &config.histograms;
            (report(histogram_convergence_study(setup, c, seed))?, derived(setup, &c.hyper, &c.ns)?)
        }
        Command::Consistency => {
            let c = &config.consistency;
            (report(sgd_sde_consistency_study(setup, c, seed))?, derived(setup, &c.hyper, &c.ns)?)
        }
        Command::Stationary => {
            let c = &config.stationary;
            (report(stationary_study(setup, c, seed))?, derived(setup, &c.hyper, &[])?)
        }
        Command::CheckAssumptions => (Outcome::Report(assumptions(config, setup, dir)?), None),
        Command::Metrics => (Outcome::Report(metrics(config, base_dir)?), None),
    })
}

fn simulate(config: &RunConfig, setup: &Setup, dir: &Path) -> Result<Outcome> {
    let c = &config.simulate;
    let plan = NoisePlan::new(config.seed);
    let init = InitialState::sample(&c.init, setup.model.p(), c.n, 0, &plan).map_err(|e| match e {
        Error::Domain(message) => Error::Config {
            field: "init".into(),
            message,
        },
        other => other,
    })?;
    let opts = EngineOptions {
        snapshots: config
            .snapshot_times
            .clone()
            .map_or_else(|| c.snapshots.clone(), SnapshotPolicy::Times),
        moment_ceiling: c.moment_ceiling,
        refine: c.refine,
        diffusion: c.diffusion.clone(),
    };
    let (model, pi) = (&setup.model, &setup.pi);
    let traj = match c.engine {
        Kind::Sgd => sgd_run(model, pi, &c.hyper, &init, &plan, &opts)?,
        Kind::Msgld => msgld_run(model, pi, &c.hyper, &init, &plan, &opts)?,
        Kind::InteractingSde => interacting_sde_run(model, pi, &c.hyper, &init, &plan, &opts)?,
        Kind::MeanfieldOde => meanfield_ode_run(model, pi, &c.hyper, &init, &plan, &opts)?,
        Kind::MeanfieldSde => meanfield_sde_run(model, pi, &c.hyper, &init, &plan, &opts)?,
    };
    let mut files = vec![dir.join("trajectory.bin")];
    save_trajectory(&files[0], &traj)?;
    if c.csv {
        let path = dir.join("trajectory.csv");
        write_trajectory_csv(&traj, std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        files.push(path);
    }
    println!(
        "{} particles, {} steps of {}, {} snapshots",
        traj.n_particles(),
        traj.steps,
        traj.step,
        traj.times.len()
    );
    Ok(Outcome::Files(files))
}

fn assumptions(config: &RunConfig, setup: &Setup, dir: &Path) -> Result<StudyReport> {
    let probes = config.check_assumptions.probes(setup.model.p());
    let audit = check_assumptions(&setup.model, &setup.pi, &probes)?;
    let path = dir.join("assumptions.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&audit)?)?;
    for v in &audit.violations {
        eprintln!("violation: {} (atom {:?}, probe {:?}): {} > {}", v.condition, v.atom, v.probe, v.lhs, v.rhs);
    }
    let mut summary = Table::new("summary", &["checks", "violations", "moment", "penalty_curvature"]);
    summary.push(vec![
        audit.checks as f64,
        audit.violations.len() as f64,
        audit.moment,
        audit.penalty_curvature,
    ]);
    Ok(StudyReport {
        id: "check-assumptions".into(),
        seed: config.seed,
        config: serde_json::to_value(&config.check_assumptions)?,
        tables: vec![summary],
        verdicts: vec![Verdict::at_most("violations", audit.violations.len() as f64, 0.0)],
        warnings: Vec::new(),
    })
}

fn metrics(config: &RunConfig, base_dir: &Path) -> Result<StudyReport> {
    let c = &config.metrics;
    let path = |p: &Option<PathBuf>, field: &str| {
        p.as_ref().map(|p| base_dir.join(p)).ok_or_else(|| Error::Config {
            field: field.into(),
            message: "trajectory path is required".into(),
        })
    };
    let a = load_trajectory(&path(&c.a, "a")?)?;
    let b = load_trajectory(&path(&c.b, "b")?)?;
    if a.p != b.p || a.times.len() != b.times.len() {
        return Err(Error::Config {
            field: "b".into(),
            message: format!(
                "trajectories differ in shape: p {} vs {}, {} vs {} snapshots",
                a.p,
                b.p,
                a.times.len(),
                b.times.len()
            ),
        });
    }
    let plan = NoisePlan::new(config.seed);
    let mut table = Table::new("w2", &["time_a", "time_b", "w2", "stderr"]);
    for i in 0..a.times.len() {
        let est = w2_auto(&a.snapshots[i], &b.snapshots[i], a.p, &plan.child(i as u64))?;
        table.push(vec![a.times[i], b.times[i], est.value, est.stderr]);
    }
    Ok(StudyReport {
        id: "metrics".into(),
        seed: config.seed,
        config: serde_json::to_value(c)?,
        tables: vec![table],
        verdicts: Vec::new(),
        warnings: Vec::new(),
    })
}

fn verdict_line(v: &Verdict) -> String {
    let status = match v.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::NotApplicable => "N/A ",
    };
    let detail = match (v.measured, v.threshold) {
        (Some(m), Some(t)) => format!("{m:.4e} {} {t:.4e}", v.relation),
        _ => String::new(),
    };
    let note = v.note.as_deref().map(|n| format!(" ({n})")).unwrap_or_default();
    format!("{status} {} {detail}{note}", v.name)
}
