//! `dualbasis`: batch front end for the analyzer simulator.

use clap::{Args, Parser, Subcommand};
use dualbasis::harness::{execute, verify, write_bundle, Command, ExperimentConfig, HarnessError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dualbasis", version, about = "Dual-basis metasurface analyzer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Kraus decomposition of the configured device.
    Povm(RunArgs),
    /// Per-port visibilities and capture efficiency.
    Calibrate(RunArgs),
    /// Exact joint table and witness report.
    Witness(RunArgs),
    /// Sampled coincidences with delta-method and bootstrap errors.
    Montecarlo(RunArgs),
    /// Pair counts needed per scheme to reach the target witness error.
    Compare(RunArgs),
    /// Visibility trade-off over the depth grid.
    Sweep(RunArgs),
    /// Re-check the hashes of a finished output directory.
    Verify {
        /// Output directory holding manifest.json.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo replicates per ladder point.
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(r) = args.replicates {
        cfg.run.replicates = r;
    }
    if let Some(o) = &args.out {
        cfg.output.dir = o.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn run(cmd: Command, args: &RunArgs) -> Result<(), HarnessError> {
    let cfg = load(args)?;
    let work = || execute(cmd, &cfg);
    let bundle = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| HarnessError::Runtime {
                module: "cli-harness",
                message: e.to_string(),
            })?
            .install(work)?,
        None => work()?,
    };
    let dir = PathBuf::from(&cfg.output.dir);
    write_bundle(&bundle, &dir)?;
    for name in bundle.files.keys() {
        println!("{}", dir.join(name).display());
    }
    println!("{}", dir.join(dualbasis::harness::MANIFEST).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Povm(a) => run(Command::Povm, a),
        Cmd::Calibrate(a) => run(Command::Calibrate, a),
        Cmd::Witness(a) => run(Command::Witness, a),
        Cmd::Montecarlo(a) => run(Command::Montecarlo, a),
        Cmd::Compare(a) => run(Command::Compare, a),
        Cmd::Sweep(a) => run(Command::Sweep, a),
        Cmd::Verify { dir } => match verify(dir) {
            Ok(r) if r.ok() => {
                println!("ok: {} files match {}", r.checked.len(), r.config_hash);
                return ExitCode::SUCCESS;
            }
            Ok(r) => {
                for p in &r.problems {
                    eprintln!("{p}");
                }
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
