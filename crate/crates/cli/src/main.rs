use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nullscatter_cli::{parse_override, run_file, RunOptions, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "nullscatter", version, about = "Null geodesic scattering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one null geodesic.
    Trace(Common),
    /// Tabulate the scattering relation over a fan of boundary rays.
    ScatterMap(Common),
    /// Check gauge invariance of the scattering data.
    VerifyGauge(Common),
    /// Recover the second fundamental form from escape times.
    RecoverSff(Common),
    /// Normalize metric pairs and compare boundary jets.
    NormalizeJets(Common),
    /// Fit a symmetric form from light-cone samples.
    LightconeFit(Common),
    /// Measure scattering sensitivity to boundary-vanishing perturbations.
    Sensitivity(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; overrides the scenario's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for randomized sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Tolerance override `key=value`, repeatable.
    #[arg(long = "tol-override", value_name = "KEY=VALUE")]
    tol_override: Vec<String>,
}

fn main() {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Trace(c) => ("trace", c),
        Command::ScatterMap(c) => ("scatter-map", c),
        Command::VerifyGauge(c) => ("verify-gauge", c),
        Command::RecoverSff(c) => ("recover-sff", c),
        Command::NormalizeJets(c) => ("normalize-jets", c),
        Command::LightconeFit(c) => ("lightcone-fit", c),
        Command::Sensitivity(c) => ("sensitivity", c),
    };
    if let Some(t) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("{name}: cannot start {t} threads: {e}");
            std::process::exit(EXIT_CONFIG);
        }
    }
    let tol_overrides = match common.tol_override.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{name}: {e}");
            std::process::exit(EXIT_CONFIG);
        }
    };
    let opts = RunOptions { out: common.out.clone(), seed: common.seed, tol_overrides };
    std::process::exit(run_file(name, &common.scenario, &opts));
}
