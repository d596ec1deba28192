mod artifacts;
mod config;
mod error;
mod render;
mod run;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use artifacts::Embedded;
use config::RunConfig;
use error::CliError;
use run::Methods;

/// Entropic Wasserstein unfolding experiments.
#[derive(Parser)]
#[command(name = "otunfold", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config, or any CSV/SVG/JSON artifact of an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for seeds and sweep cells.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Unfold with the OT solver.
    Solve(RunArgs),
    /// Run OT and RL for every configured bin count on the same problems.
    Compare(RunArgs),
    /// One compare run per value of the `[sweep]` axis.
    Sweep(RunArgs),
    /// Check the config and the problems it generates.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Redraw all SVGs of a run or sweep directory from its CSVs.
    Render {
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat the command recorded in an artifact's embedded header.
    Rerun {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn load(path: &Path, seeds: Option<Vec<u64>>) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(path)?;
    if let Some(s) = seeds {
        config.seeds = s;
        config.validate()?;
    }
    Ok(config)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(pool.install(f))
}

fn execute(command: &str, config: RunConfig, out: &Path, threads: Option<usize>) -> Result<(), CliError> {
    let embedded = Embedded::new(command, &config);
    let failures = with_threads(threads, || match command {
        "solve" => run::run_all(&config, Methods::OtOnly).and_then(|r| run::write_run(out, &embedded, &r)),
        "compare" => run::run_all(&config, Methods::OtAndRl).and_then(|r| run::write_run(out, &embedded, &r)),
        "sweep" => run::sweep(out, &embedded),
        other => Err(CliError::Config(format!("unknown command `{other}`"))),
    })??;
    println!("wrote {}", out.display());
    if failures > 0 {
        return Err(CliError::Solver(format!(
            "{failures} run(s) aborted; see {}",
            out.join("summary.json").display()
        )));
    }
    Ok(())
}

fn validate(path: &Path, seeds: Option<Vec<u64>>) -> Result<(), CliError> {
    let config = load(path, seeds)?;
    let mut bad = 0;
    for &seed in &config.seeds {
        let (problem, _) = config.build_problem(seed)?;
        let report = otunfold::validate_problem(&problem);
        println!(
            "seed {seed}: m = {}, L = {}, n = {}: {report}",
            problem.m(),
            problem.l(),
            problem.n()
        );
        if !report.is_pass() {
            bad += 1;
        }
    }
    if bad > 0 {
        return Err(CliError::Config(format!("{bad} problem(s) failed validation")));
    }
    println!("config ok");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(a) => execute("solve", load(&a.config, a.seeds)?, &a.out, a.threads),
        Command::Compare(a) => execute("compare", load(&a.config, a.seeds)?, &a.out, a.threads),
        Command::Sweep(a) => execute("sweep", load(&a.config, a.seeds)?, &a.out, a.threads),
        Command::Validate { config, seeds } => validate(&config, seeds),
        Command::Render { out } => render::render_dir(&out),
        Command::Rerun { config, out, threads } => {
            let text = std::fs::read_to_string(&config).map_err(|e| CliError::Io(format!("{}: {e}", config.display())))?;
            let embedded = artifacts::read_embedded(&config, &text)?
                .ok_or_else(|| CliError::Config(format!("{} is not an artifact", config.display())))?;
            let resolved = RunConfig::load(&config)?;
            execute(&embedded.command, resolved, &out, threads)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("otunfold: {e}");
            e.exit_code()
        }
    }
}
