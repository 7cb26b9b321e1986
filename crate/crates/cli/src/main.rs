use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlp_cli::config::{validate_config, ConfigIssue};
use dlp_cli::experiments::{list_experiments, run_experiment, RunOptions, DEFAULT_TRUTH_CAP};
use dlp_cli::oracle_cmd::{parse_oracle_config, run_oracle};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Experiments with discrete Langevin samplers.
#[derive(Parser)]
#[command(name = "dlp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its CSVs and manifest.
    Run {
        config: PathBuf,
        /// Replace the config's seed list with this one seed.
        #[arg(long, value_parser = clap::value_parser!(u64).range(..=dlp_cli::config::MAX_SEED))]
        seed_override: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Largest state space enumerated for exact results.
        #[arg(long, default_value_t = DEFAULT_TRUTH_CAP)]
        state_cap: u128,
    },
    /// Check a config and print its canonical form.
    Validate { config: PathBuf },
    /// List experiment kinds and their bundled configs.
    ListExperiments,
    /// Dump the exact target, kernels and stationary distributions of a small model.
    Oracle {
        model_config: PathBuf,
        #[arg(long, default_value = "oracle_out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4096)]
        state_cap: u128,
    },
}

fn read(path: &Path) -> Result<String, ExitCode> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn report(path: &Path, issues: &[ConfigIssue]) -> ExitCode {
    eprintln!("{}: {} problem(s)", path.display(), issues.len());
    for i in issues {
        eprintln!("  {i}");
    }
    ExitCode::from(EXIT_CONFIG)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) | Err(code) => code,
    }
}

fn run(command: Command) -> Result<ExitCode, ExitCode> {
    match command {
        Command::Run {
            config,
            seed_override,
            out_dir,
            threads,
            state_cap,
        } => {
            let text = read(&config)?;
            let mut cfg = validate_config(&text).map_err(|e| report(&config, &e))?;
            if let Some(seed) = seed_override {
                cfg.seeds = vec![seed];
            }
            if threads == Some(0) {
                eprintln!("error: --threads must be positive");
                return Err(ExitCode::from(EXIT_CONFIG));
            }
            let opts = RunOptions {
                out_dir,
                threads,
                state_cap,
                base_dir: config.parent().map(Path::to_path_buf),
            };
            let rep = run_experiment(&cfg, &opts).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_RUNTIME)
            })?;
            for r in rep.runs.iter().filter(|r| !r.ok) {
                eprintln!(
                    "run failed: {} alpha={:?} seed={:?}: {}",
                    r.sampler,
                    r.alpha,
                    r.seed,
                    r.error.as_deref().unwrap_or("")
                );
            }
            println!("{} runs, {} failed, results in {}", rep.runs.len(), rep.failures(), rep.out_dir.display());
            for (k, v) in &rep.summary {
                println!("  {k}: {v}");
            }
            Ok(if rep.failures() > 0 {
                ExitCode::from(EXIT_RUNTIME)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Validate { config } => {
            let text = read(&config)?;
            let cfg = validate_config(&text).map_err(|e| report(&config, &e))?;
            print!("{}", cfg.to_canonical());
            eprintln!("ok: config hash {}", cfg.hash());
            Ok(ExitCode::SUCCESS)
        }
        Command::ListExperiments => {
            for (kind, description, file) in list_experiments() {
                println!("{:<20} {:<20} {description}", kind.name(), file);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle {
            model_config,
            out_dir,
            state_cap,
        } => {
            let text = read(&model_config)?;
            let cfg = parse_oracle_config(&text).map_err(|e| report(&model_config, &e))?;
            let files = run_oracle(&cfg, &out_dir, state_cap, model_config.parent()).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_RUNTIME)
            })?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
