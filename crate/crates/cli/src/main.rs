use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoanneal_core::config::{load_config, preset, RunConfig, PRESETS};
use geoanneal_core::experiment::{run_stages, Manifest, Stage};
use geoanneal_core::Error;

/// Flux-qubit annealing with the geometric term: spectra, effective frames,
/// dynamics and fidelity sweeps.
#[derive(Parser)]
#[command(name = "geoanneal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lowest levels, A(s), B(s) and gap ratios against the Ising model.
    Spectrum(Common),
    /// Geometric term G in both bases, with the Hellmann-Feynman comparison.
    Frame(Common),
    /// Populations and fidelity with and without G at the configured t_f.
    Dynamics(Common),
    /// End fidelity over the configured t_f list.
    Sweep(Common),
    /// Structural and dynamical invariants as a pass/fail report.
    Verify(Common),
    /// Whatever the config's `experiment` selects.
    Run(Common),
    /// Print a built-in preset config.
    Preset {
        /// One of figure1, figure2, figure3, figure6, invariants, custom.
        name: String,
    },
}

#[derive(Args)]
struct Common {
    /// Config file, or `preset:<name>` for a built-in one.
    #[arg(long)]
    config: String,
    /// Output directory (default: the config's `output_dir`, else `out`).
    #[arg(long, env = "GEOANNEAL_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for per-s and per-t_f work.
    #[arg(long, env = "GEOANNEAL_THREADS")]
    threads: Option<usize>,
}

fn load(arg: &str) -> Result<RunConfig, Error> {
    match arg.strip_prefix("preset:") {
        Some(name) => preset(name),
        None => load_config(arg.as_ref()),
    }
}

fn execute(common: &Common, stages: Option<&[Stage]>, command: &str) -> Result<Manifest, Error> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Validation { key: "--threads".into(), message: "must be at least 1".into() });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    let cfg = load(&common.config).map_err(|e| e.in_stage("config"))?;
    let out = common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    run_stages(&cfg, stages, &out, command)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, stages, name): (&Common, Option<Vec<Stage>>, &str) = match &cli.command {
        Command::Spectrum(c) => (c, Some(vec![Stage::Spectrum]), "spectrum"),
        Command::Frame(c) => (c, Some(vec![Stage::Frame]), "frame"),
        Command::Dynamics(c) => (c, Some(vec![Stage::Dynamics]), "dynamics"),
        Command::Sweep(c) => (c, Some(vec![Stage::Sweep]), "sweep"),
        Command::Verify(c) => (c, Some(vec![Stage::Verify]), "verify"),
        Command::Run(c) => (c, None, "run"),
        Command::Preset { name } => {
            return match PRESETS.iter().find(|(n, _)| n == name) {
                Some((_, text)) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                None => {
                    let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                    eprintln!("error: config: unknown preset `{name}` (known: {})", known.join(", "));
                    ExitCode::from(2)
                }
            };
        }
    };
    match execute(common, stages.as_deref(), name) {
        Ok(m) => {
            for f in &m.files {
                println!("{f}");
            }
            eprintln!("{} finished in {:.2} s", m.experiment, m.wall_seconds);
            if m.invariants_pass == Some(false) {
                eprintln!("error: verify: at least one invariant failed; see invariants.json");
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
