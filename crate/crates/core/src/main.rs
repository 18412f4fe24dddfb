use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sparse_ura::codebook::PatternCodebook;
use sparse_ura::config::{SystemConfig, PROFILE_NAMES};
use sparse_ura::harness::{self, Harness, Scenario, SweepResult};
use sparse_ura::power_division::plan_for_config;
use sparse_ura::seeds::{derive_seed, Stream};
use sparse_ura::Result;

#[derive(Parser)]
#[command(
    name = "ura",
    version,
    about = "Sparse-code unsourced random access simulator"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "profile")]
    config: Option<PathBuf>,
    /// Built-in configuration profile.
    #[arg(long, global = true, value_name = "NAME")]
    profile: Option<String>,
    /// Override one configuration field; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads for Monte Carlo trials.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory for results.csv and summary.json.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Record wall-clock runtimes (makes outputs non-reproducible).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate PUPE at a single E_b/N_0.
    Run {
        #[arg(long, allow_hyphen_values = true)]
        eb_n0: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Estimate PUPE on an E_b/N_0 grid.
    Sweep {
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Bisect for the minimum E_b/N_0 meeting the target PUPE.
    Minimize {
        #[arg(long, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, allow_hyphen_values = true)]
        hi: f64,
        /// Defaults to the configured target.
        #[arg(long)]
        target: Option<f64>,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Print the power-division plan as JSON.
    Plan,
    /// Write the pattern codebook in binary form.
    DumpCodebook {
        #[arg(value_name = "FILE")]
        path: PathBuf,
    },
    /// List built-in profiles.
    Profiles,
}

fn load_config(c: &Common) -> Result<SystemConfig> {
    let mut cfg = match (&c.config, &c.profile) {
        (Some(path), _) => SystemConfig::from_json(&fs::read_to_string(path)?)?,
        (None, Some(name)) => SystemConfig::profile(name)?,
        (None, None) => SystemConfig::profile("toy-ka16")?,
    };
    for s in &c.sets {
        cfg.set(s)?;
    }
    cfg.ensure_valid()?;
    Ok(cfg)
}

fn grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    if step.is_nan() || step <= 0.0 || to < from {
        return vec![from];
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    // Round to 1e-9 dB so that accumulated steps print cleanly.
    (0..=n)
        .map(|i| ((from + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

fn emit(mut res: SweepResult, c: &Common) -> Result<()> {
    if !c.timing {
        res.points.iter_mut().for_each(|p| p.runtime_s = 0.0);
    }
    match &c.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            harness::write_csv(&res, fs::File::create(dir.join("results.csv"))?, c.timing)?;
            fs::write(dir.join("summary.json"), harness::to_json(&res) + "\n")?;
        }
        None => harness::write_csv(&res, io::stdout().lock(), c.timing)?,
    }
    if let Some(x) = res.min_eb_n0_db {
        eprintln!("minimum E_b/N_0 meeting PUPE ≤ {}: {x} dB", res.target_pupe);
    } else if !res.crossing_found && res.points.len() > 1 {
        eprintln!("no crossing of PUPE ≤ {} found", res.target_pupe);
    }
    Ok(())
}

fn write_text(path: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match path {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), format!("{text}\n"))?;
        }
        None => writeln!(io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let c = &cli.common;
    if let Command::Profiles = cli.command {
        for name in PROFILE_NAMES {
            println!("{name}");
        }
        return Ok(());
    }
    let cfg = load_config(c)?;
    match cli.command {
        Command::Run { eb_n0, trials } => {
            let h = Harness::new(Scenario::new(cfg)?, c.workers)?;
            emit(h.sweep(&[eb_n0], trials)?, c)
        }
        Command::Sweep {
            from,
            to,
            step,
            trials,
        } => {
            let h = Harness::new(Scenario::new(cfg)?, c.workers)?;
            emit(h.sweep(&grid(from, to, step), trials)?, c)
        }
        Command::Minimize {
            lo,
            hi,
            target,
            trials,
        } => {
            let target = target.unwrap_or(cfg.target_pupe);
            let h = Harness::new(Scenario::new(cfg)?, c.workers)?;
            emit(h.find_min_ebn0(target, (lo, hi), trials)?, c)
        }
        Command::Plan => write_text(
            c.out.as_deref(),
            "plan.json",
            &plan_for_config(&cfg)?.to_json(),
        ),
        Command::DumpCodebook { path } => {
            let seed = derive_seed(cfg.master_seed, Stream::Codebook, 0);
            let cb = PatternCodebook::generate(cfg.n_p, cfg.n_c, cfg.b_p, seed)?;
            cb.dump(io::BufWriter::new(fs::File::create(path)?))
        }
        Command::Profiles => unreachable!(),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
