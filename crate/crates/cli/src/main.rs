use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use rssim_core::config::{Mode, SimConfig};
use rssim_core::error::SimError;
use rssim_core::experiment::{render_csv, run_point, run_sweep, write_atomic};
use rssim_core::validation::validate_mode;

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "rssim", version, about = "Rate-splitting massive MIMO downlink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a single drop at the configured scenario.
    Run(Common),
    /// Run the configured parameter sweep and write the CSV.
    Sweep(Common),
    /// Check every closed form against Monte Carlo.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Flat TOML configuration file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (CSV for run and sweep).
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Drops per sweep point, or Monte Carlo samples for validate.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Rs,
    NoRs,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Rs => vec![Mode::Rs],
            ModeArg::NoRs => vec![Mode::NoRs],
            ModeArg::Both => vec![Mode::Rs, Mode::NoRs],
        }
    }
}

enum Failure {
    Sim(SimError),
    Validation(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Sim(e)
    }
}

/// Without a config file, validation runs on a small scenario so the Monte
/// Carlo checks finish quickly.
fn load(common: &Common, small_default: bool) -> Result<SimConfig, SimError> {
    let mut cfg = match &common.config {
        Some(p) => SimConfig::from_path(p)?,
        None => {
            let mut c = SimConfig::default();
            if small_default {
                c.scenario.antennas = 16;
                c.scenario.users = 3;
            }
            c
        }
    };
    if let Some(s) = common.seed {
        cfg.scenario.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.sweep.modes = m.modes();
    }
    if let Some(o) = &common.output {
        cfg.sweep.output_path = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(c) => {
            let cfg = load(&c, false)?;
            let rows = cfg
                .sweep
                .modes
                .iter()
                .map(|&m| run_point(&cfg, m, cfg.scenario.seed))
                .collect::<Result<Vec<_>, _>>()?;
            let csv = render_csv(&rows);
            match &c.output {
                Some(p) => write_atomic(p, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Sweep(c) => {
            let mut cfg = load(&c, false)?;
            if let Some(t) = c.trials {
                cfg.sweep.drops = t;
                cfg.validate()?;
            }
            let rows = run_sweep(&cfg)?;
            info!("wrote {} rows to {}", rows.len(), cfg.sweep.output_path.display());
        }
        Command::Validate(c) => {
            let cfg = load(&c, true)?;
            let n = c.trials.unwrap_or(cfg.sweep.mc_samples);
            let report = validate_mode(&cfg, n)?;
            let text = report.render();
            match &c.output {
                Some(p) => write_atomic(p, &text)?,
                None => print!("{text}"),
            }
            if !report.all_passed() {
                return Err(Failure::Validation("one or more validation checks failed".into()));
            }
        }
    }
    Ok(())
}

fn configure_threads() -> Result<(), SimError> {
    let Ok(v) = std::env::var("RSSIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| SimError::config("RSSIM_THREADS", format!("expected a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| SimError::config("RSSIM_THREADS", e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = configure_threads().map_err(Failure::from).and_then(|_| execute(cli));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Sim(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_NUMERICAL })
        }
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
    }
}
