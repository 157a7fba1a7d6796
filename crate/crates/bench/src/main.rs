use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nn_schwarz_bench::commands::{cmd_gen_data, cmd_report, cmd_solve, cmd_spectrum, cmd_train, SolveFilter};
use nn_schwarz_bench::config::{ExperimentConfig, ModeName};
use nn_schwarz_bench::{BenchError, BenchResult};

/// Reduced-order Schwarz experiments: data generation, surrogate training,
/// Schwarz solves, spectra and result tables.
#[derive(Parser, Debug)]
#[command(name = "nn-schwarz", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Work directory; overrides the config and NN_SCHWARZ_WORKDIR.
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// Seed for both sampling and training.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample boundary data and solve for the training set of every interior patch.
    GenData(Common),
    /// Train one surrogate per interior patch.
    Train(Common),
    /// Run the Schwarz variants and compare against the monodomain solve.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Restrict to these modes (classical, surrogate, oracle, linear).
        #[arg(long = "mode")]
        modes: Vec<ModeName>,
        /// Restrict to these boundary conditions.
        #[arg(long = "bc")]
        bcs: Vec<usize>,
    },
    /// Singular value spectra of the linearized boundary map.
    Spectrum(Common),
    /// Collect the result tables under a work directory.
    Report {
        #[arg(long, required_unless_present = "config")]
        workdir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(common: &Common) -> BenchResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(dir) = &common.workdir {
        cfg.paths.workdir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.sampling.seed = seed;
        cfg.surrogate.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> BenchResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| BenchError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::GenData(c) => {
            let rec = cmd_gen_data(&load(&c)?)?;
            println!("gen-data: {} files in {:.1}s", rec.files.len(), rec.seconds);
        }
        Command::Train(c) => {
            let rec = cmd_train(&load(&c)?)?;
            for (k, v) in rec.notes.iter().filter(|(k, _)| k.ends_with("loss")) {
                println!("{k} = {v}");
            }
            println!("train: {:.1}s", rec.seconds);
        }
        Command::Solve { common, modes, bcs } => {
            let filter = SolveFilter {
                modes: (!modes.is_empty()).then_some(modes),
                bcs: (!bcs.is_empty()).then_some(bcs),
            };
            let summary = cmd_solve(&load(&common)?, &filter)?;
            println!(
                "{:<26}{:>4}{:>12}{:>12}{:>12}{:>7}{:>10}",
                "method", "bc", "L2", "H1", "Linf", "iters", "seconds"
            );
            for r in &summary.rows {
                println!(
                    "{:<26}{:>4}{:>12.4e}{:>12.4e}{:>12.4e}{:>7}{:>10.3}",
                    r.method, r.bc, r.l2, r.h1, r.linf, r.iters, r.seconds
                );
            }
        }
        Command::Spectrum(c) => {
            let rec = cmd_spectrum(&load(&c)?)?;
            println!("spectrum: {} files in {:.1}s", rec.files.len(), rec.seconds);
        }
        Command::Report { workdir, config } => {
            let dir = match (workdir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => ExperimentConfig::load(&c)?.workdir().to_path_buf(),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let s = cmd_report(&dir)?;
            println!("report: {} rows", s.error_rows.len());
            for p in &s.written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
