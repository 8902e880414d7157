use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use crate::harness::{compare, run_experiment, sweep, write_run, write_sweep, ExperimentConfig};

pub const OUT_DIR_ENV: &str = "OLC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "results";

#[derive(Debug, Parser)]
#[command(name = "olc", version, about = "Online control of unknown time-varying linear systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured controller and write per-step statistics.
    Run(RunArgs),
    /// Run at several horizons and fit the regret scaling exponent.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated horizons; overrides `horizons` in the config.
        #[arg(long, value_delimiter = ',')]
        horizons: Vec<usize>,
    },
    /// Run the standard comparison lineup instead of the configured controllers.
    Compare(RunArgs),
    /// Parse and check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; falls back to $OLC_OUT_DIR, then the config, then `results`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `base_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `runs`.
    #[arg(long)]
    pub runs: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.base_seed = seed;
        }
        if let Some(runs) = self.runs {
            cfg.runs = runs;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        resolve_out_dir(self.out.as_deref(), std::env::var_os(OUT_DIR_ENV), cfg.out_dir.as_deref())
    }
}

/// `--out`, then the environment variable, then the config, then the default.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<OsString>, config: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => {
            let cfg = args.load()?;
            let result = run_experiment(&cfg)?;
            let out = args.out_dir(&cfg);
            write_run(&out, &cfg, &result)?;
            for c in &result.controllers {
                println!("{:<12} final regret {:>14.4} +- {:.4}", c.name, c.final_regret_mean, c.final_regret_std);
            }
            println!("wrote {}", out.display());
        }
        Command::Sweep { run, horizons } => {
            let cfg = run.load()?;
            let horizons = if horizons.is_empty() { cfg.horizons.clone() } else { horizons };
            if horizons.iter().any(|&t| t == 0) {
                return Err(crate::error::config("--horizons must all be at least 1"));
            }
            let result = sweep(&cfg, &horizons)?;
            let out = run.out_dir(&cfg);
            write_sweep(&out, &cfg, &result)?;
            for (name, fit) in &result.fits {
                match fit {
                    Some(f) => println!("{name:<12} slope {:.4} (se {:.4})", f.slope, f.slope_stderr),
                    None => println!("{name:<12} slope unavailable"),
                }
            }
            println!("wrote {}", out.display());
        }
        Command::Compare(args) => {
            let mut cfg = args.load()?;
            let result = compare(&cfg)?;
            cfg.controllers = crate::harness::comparison_lineup();
            let out = args.out_dir(&cfg);
            write_run(&out, &cfg, &result)?;
            for c in &result.controllers {
                println!("{:<12} final regret {:>14.4} +- {:.4}", c.name, c.final_regret_mean, c.final_regret_std);
            }
            println!("wrote {}", out.display());
        }
        Command::Validate { config } => {
            ExperimentConfig::load(&config)?;
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
