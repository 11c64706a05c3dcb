//! `hymwall`: stability cones, moment-map flows and their verification
//! from a scenario file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hymwall_cli::{run_cone, run_flow, verify, CliError, Scenario};

#[derive(Parser)]
#[command(name = "hymwall", version, about = "Stability cones and moment-map flows on flat tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the stability cone and classify the scenario classes (cone.json).
    Cone(Common),
    /// Run the flow along the perturbation path (flow_<k>.json, traj_<k>.csv).
    Flow(Common),
    /// Check the written reports (verdicts.csv, verdicts.json).
    Verify(Common),
    /// Run cone, flow and verify in sequence.
    All(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory, created when missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the flow sweep and the lattice kernels.
    #[arg(long)]
    threads: Option<usize>,
}

fn prepare(c: &Common) -> Result<Scenario, CliError> {
    let mut scenario = Scenario::load(&c.scenario)?;
    if let Some(seed) = c.seed {
        scenario.seed = seed;
    }
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&c.out)?;
    Ok(scenario)
}

fn cone(s: &Scenario, out: &Path) -> Result<(), CliError> {
    let report = run_cone(s, Some(out))?;
    eprintln!("cone: {} walls, {} classifications", report.walls.len(), report.classifications.len());
    Ok(())
}

fn flow(s: &Scenario, out: &Path) -> Result<(), CliError> {
    let summary = run_flow(s, Some(out))?;
    for r in &summary.records {
        eprintln!("flow {}: predicted {}, outcome {}", r.index, r.predicted, r.status);
    }
    Ok(())
}

fn check(s: &Scenario, out: &Path) -> Result<(), CliError> {
    let outcome = verify(s, out);
    if let Ok(o) = &outcome {
        eprintln!("verify: {} rows, none failed", o.rows.len());
    }
    outcome.map(|_| ())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Cone(c) => cone(&prepare(&c)?, &c.out),
        Command::Flow(c) => flow(&prepare(&c)?, &c.out),
        Command::Verify(c) => check(&prepare(&c)?, &c.out),
        Command::All(c) => {
            let s = prepare(&c)?;
            cone(&s, &c.out)?;
            // A budget or solver failure still leaves reports to verify; the
            // flow error wins the exit code.
            let flowed = flow(&s, &c.out);
            if let Err(e @ CliError::Config(_)) = flowed {
                return Err(e);
            }
            let checked = check(&s, &c.out);
            flowed.and(checked)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hymwall: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
