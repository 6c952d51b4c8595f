use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nlwlab::data::{generate, DataSpec, Profile};
use nlwlab::report::{build_report, render_markdown, write_csv};
use nlwlab::run::{prepare_dir, run_config_file, RunOptions};
use nlwlab_core::grid::Grid;
use nlwlab_core::io::save_pair;

#[derive(Parser)]
#[command(name = "nlwlab", version, about = "Randomized-data experiments for the energy-critical wave equation")]
struct Cli {
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for ensembles; defaults to the available cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Output directory (`run`, `report`) or file (`make-data`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a field pair and its sidecar.
    MakeData(MakeData),
    /// Run the experiment described by a TOML configuration.
    Run { config: PathBuf },
    /// Summarize verdicts from run directories.
    Report { dirs: Vec<PathBuf> },
}

#[derive(Args)]
struct MakeData {
    #[arg(long, value_enum)]
    profile: Profile,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 8.0)]
    side: f64,
    #[arg(long, default_value_t = 0.0)]
    s: f64,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 1.0)]
    width: f64,
    #[arg(long, default_value_t = 4)]
    bumps: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Target `H^s` norm of `u0`.
    #[arg(long)]
    pos_norm: Option<f64>,
    /// Target `H^{s-1}` norm of `u1`; `u1 = 0` when omitted.
    #[arg(long)]
    vel_norm: Option<f64>,
}

fn make_data(cli: &Cli, args: &MakeData) -> Result<bool> {
    let Some(out) = &cli.out else {
        bail!("make-data needs --out <file>");
    };
    if out.exists() && !cli.force {
        bail!("{} already exists; pass --force to overwrite", out.display());
    }
    let spec = DataSpec {
        profile: args.profile,
        s: args.s,
        amplitude: args.amplitude,
        width: args.width,
        bumps: args.bumps,
        delta: args.delta,
        seed: cli.seed.unwrap_or(0),
        pos_norm: args.pos_norm,
        vel_norm: args.vel_norm,
    };
    let grid = Grid::new(args.dim, args.n, args.side)?;
    let (pair, sidecar) = generate(&spec, &grid)?;
    save_pair(out, &pair, &sidecar).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", serde_json::to_string_pretty(&sidecar.norms)?);
    Ok(true)
}

fn workers(cli: &Cli) -> usize {
    cli.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
}

fn execute(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::MakeData(args) => make_data(cli, args),
        Command::Run { config } => {
            let opts = RunOptions {
                out: cli.out.clone(),
                force: cli.force,
                seed: cli.seed,
                workers: workers(cli),
            };
            let outcome = run_config_file(config, &opts)?;
            println!(
                "{}: {} ({})",
                outcome.verdict.experiment,
                if outcome.verdict.pass { "pass" } else { "FAIL" },
                outcome.dir.display()
            );
            Ok(outcome.verdict.pass)
        }
        Command::Report { dirs } => {
            let report = build_report(dirs);
            let md = render_markdown(&report);
            print!("{md}");
            if let Some(out) = &cli.out {
                prepare_dir(out, cli.force)?;
                std::fs::write(out.join("summary.md"), &md)?;
                write_csv(&report, std::fs::File::create(out.join("summary.csv"))?)?;
            }
            Ok(report.pass())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
