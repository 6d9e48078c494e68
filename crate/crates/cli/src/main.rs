use std::path::PathBuf;
use std::process::{Command, ExitCode};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tvneumann::analysis::run_oracle_suite;
use tvneumann::scenario::{list_scenarios, mesh_info, resolve_scenario, run_scenario, RunOptions, SolverKind};

#[derive(Parser)]
#[command(name = "tvneumann", version, about = "Solve restricted TV Neumann problems on weighted grids and graphs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run scenarios with the solver they select.
    Solve(RunArgs),
    /// Run scenarios with the relaxed primal-dual solver only.
    Relax(RunArgs),
    /// Compute λ(g) and the unrestricted classification for the scenario data.
    Lambda(RunArgs),
    /// Run the stability driver of a scenario.
    Stability(RunArgs),
    /// Run the randomized oracle suite against brute force.
    Verify(VerifyArgs),
    /// Print domain statistics of a scenario's mesh.
    MeshInfo(ScenarioArg),
    /// List the built-in scenarios.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name or TOML path; repeat for a batch.
    #[arg(long, required = true)]
    scenario: Vec<String>,
    /// Directory for the JSON report, PGM masks and CSV field.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Relative balance tolerance for data that are not rebalanced.
    #[arg(long)]
    tol_override: Option<f64>,
    /// Scenarios run in parallel processes in batch mode.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 18)]
    max_cells: usize,
    /// Write the verdicts as JSON into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArg {
    #[arg(long)]
    scenario: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<u8> {
    match cmd {
        Cmd::Solve(a) => run(a, None, "solve"),
        Cmd::Relax(a) => run(a, Some(SolverKind::Relaxed), "relax"),
        Cmd::Lambda(a) => run(a, Some(SolverKind::Lambda), "lambda"),
        Cmd::Stability(a) => run(a, Some(SolverKind::Stability), "stability"),
        Cmd::Verify(a) => verify(a),
        Cmd::MeshInfo(a) => {
            let s = resolve_scenario(&a.scenario)?;
            println!("{}", serde_json::to_string_pretty(&mesh_info(&s)?)?);
            Ok(0)
        }
        Cmd::List => {
            for name in list_scenarios() {
                println!("{name}");
            }
            Ok(0)
        }
    }
}

fn run(args: RunArgs, solver: Option<SolverKind>, subcommand: &str) -> anyhow::Result<u8> {
    if args.scenario.len() > 1 {
        return batch(&args, subcommand);
    }
    let scenario = resolve_scenario(&args.scenario[0])?;
    let opts = RunOptions {
        out_dir: args.out.clone(),
        seed: args.seed,
        balance_tol: args.tol_override,
        solver,
    };
    let outcome = run_scenario(&scenario, &opts).with_context(|| format!("scenario {}", scenario.name))?;
    if args.out.is_none() {
        println!("{}", serde_json::to_string_pretty(&outcome.report)?);
    }
    for path in &outcome.written {
        log::info!("wrote {}", path.display());
    }
    if let Some(check) = &outcome.report.expected_check {
        for item in check.items.iter().filter(|i| !i.passed) {
            eprintln!(
                "{}: {} = {:?}, expected {} ± {}{}",
                scenario.name,
                item.metric,
                item.actual,
                item.expected,
                item.tol,
                if item.relative { " (relative)" } else { "" }
            );
        }
    }
    Ok(outcome.exit_code() as u8)
}

/// Each scenario runs in its own child process; at most `jobs` at a time.
fn batch(args: &RunArgs, subcommand: &str) -> anyhow::Result<u8> {
    let exe = std::env::current_exe()?;
    let jobs = args.jobs.max(1);
    let mut worst = 0u8;
    for chunk in args.scenario.chunks(jobs) {
        let mut children = Vec::new();
        for name in chunk {
            let mut cmd = Command::new(&exe);
            cmd.arg(subcommand).arg("--scenario").arg(name);
            if let Some(out) = &args.out {
                cmd.arg("--out").arg(out);
            }
            if let Some(seed) = args.seed {
                cmd.arg("--seed").arg(seed.to_string());
            }
            if let Some(tol) = args.tol_override {
                cmd.arg("--tol-override").arg(tol.to_string());
            }
            children.push((name, cmd.spawn()?));
        }
        for (name, mut child) in children {
            let code = child.wait()?.code().unwrap_or(1) as u8;
            if code != 0 {
                eprintln!("{name}: exit {code}");
            }
            worst = match (worst, code) {
                (1, _) | (_, 1) => 1,
                (a, b) => a.max(b),
            };
        }
    }
    Ok(worst)
}

fn verify(args: VerifyArgs) -> anyhow::Result<u8> {
    let verdicts = run_oracle_suite(args.seed, args.instances, args.max_cells)?;
    for v in &verdicts {
        println!(
            "{} {} ({} checked){}",
            if v.passed { "PASS" } else { "FAIL" },
            v.name,
            v.checked,
            if v.detail.is_empty() { String::new() } else { format!(": {}", v.detail) }
        );
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&verdicts)? + "\n")?;
    }
    Ok(if verdicts.iter().all(|v| v.passed) { 0 } else { 2 })
}
