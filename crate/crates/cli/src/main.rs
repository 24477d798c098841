use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gpdeim_cli::{pipeline, CliError, Mode, RunConfig};

#[derive(Parser)]
#[command(name = "gpdeim", version, about = "Structure-preserving hyper-reduction of Hamiltonian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override `run.mode` (fom, rom, hrom, hrom-adaptive).
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Override `run.output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parameter and m fan-out.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Full-order runs over the training grid.
    Snapshots,
    /// Basis and DEIM construction from stored snapshots.
    Build,
    /// Runs the configured mode at the test parameters.
    Run,
    /// Merges run outputs into a summary.
    Report,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(m) = &cli.mode {
        cfg.run.mode = Mode::parse(m)?;
    }
    if let Some(out) = &cli.out {
        cfg.run.output = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Report => {
            let out = match (&cli.out, &cli.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => load(cli)?.run.output,
                (None, None) => return Err(CliError::Validation("report needs --out or --config".into())),
            };
            let r = pipeline::report(&out)?;
            println!("merged {} error rows into {}", r.errors.len(), out.join("report").display());
        }
        Command::Snapshots => {
            let cfg = load(cli)?;
            let sets = pipeline::snapshots(&cfg)?;
            println!("wrote {} snapshot sets", sets.len());
        }
        Command::Build => {
            let cfg = load(cli)?;
            let b = pipeline::build(&cfg)?;
            println!(
                "basis 2k = {} (residuals {:.2e}, {:.2e}), DEIM m = {}",
                b.basis.matrix().ncols(),
                b.certificate.orthonormality,
                b.certificate.symplecticity,
                b.deim_basis.ncols()
            );
        }
        Command::Run => {
            let cfg = load(cli)?;
            let out = pipeline::run(&cfg)?;
            for r in &out.reports {
                match r.errors {
                    Some(e) => println!("{} {}: E_L2 = {:.3e}, E_fin = {:.3e}", r.mode, r.label, e.l2, e.fin),
                    None => println!("{} {}: max drift {:.3e}", r.mode, r.label, r.max_drift()),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
