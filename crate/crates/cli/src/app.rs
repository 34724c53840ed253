//! Command-line parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult, EXIT_CHECK_FAILURE, EXIT_CONFIG, EXIT_OK};
use crate::manifest::{Mode, RunManifest};
use crate::runs::{aggregate, run_ablate, run_compare, run_train};
use crate::selfcheck::{run_selfcheck, Fault};

#[derive(Parser, Debug)]
#[command(
    name = "bem",
    version,
    about = "Balanced and entropy-based mixing for long-tailed semi-supervised learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the configured learner on every seed.
    Train(RunFlags),
    /// Train the FixMatch baseline and BEM on identical data and seeds.
    Compare(RunFlags),
    /// Run the nine-variant ablation preset.
    Ablate(RunFlags),
    /// Run the embedded oracle battery.
    Selfcheck {
        /// Corrupt one routine on purpose (negative control).
        #[arg(long, hide = true, value_name = "FAULT")]
        inject_fault: Option<String>,
    },
}

#[derive(Args, Debug, Default)]
pub struct RunFlags {
    /// Flat `key = value` configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed(s), comma separated; overrides `seeds`.
    #[arg(long, value_name = "SEEDS")]
    pub seed: Option<String>,
    /// Output directory; overrides `out`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Mixer: none, mixup, cutmix or cammix; overrides `mixer`.
    #[arg(long, value_name = "MIXER")]
    pub mixer: Option<String>,
    /// Enable or disable BEM (true/false); overrides `bem`.
    #[arg(long, value_name = "BOOL")]
    pub bem: Option<String>,
    /// Write PPM grids of mixed batches.
    #[arg(long)]
    pub dump_mixes: bool,
    /// Additional `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Builds the manifest: defaults, then the config file, then the flags.
pub fn build_manifest(mode: Mode, flags: &RunFlags) -> CliResult<RunManifest> {
    let mut m = RunManifest::default();
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        m.apply_text(&text)?;
    }
    m.mode = mode;
    if let Some(seed) = &flags.seed {
        m.apply_flag("seeds", seed)?;
    }
    if let Some(out) = &flags.out {
        m.out = out.clone();
    }
    if let Some(mixer) = &flags.mixer {
        m.apply_flag("mixer", mixer)?;
    }
    if let Some(bem) = &flags.bem {
        m.apply_flag("bem", bem)?;
    }
    if flags.dump_mixes {
        m.dump_mixes = true;
    }
    for kv in &flags.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config {
            line: None,
            key: None,
            message: format!("expected KEY=VALUE, found `{kv}`"),
        })?;
        m.apply_flag(k.trim(), v.trim())?;
    }
    m.validate()?;
    Ok(m)
}

fn execute(command: Command) -> CliResult<i32> {
    let mut progress = |line: &str| eprintln!("{line}");
    let (mode, flags) = match command {
        Command::Selfcheck { inject_fault } => {
            let fault = match inject_fault {
                None => None,
                Some(s) => Some(Fault::parse(&s).ok_or_else(|| {
                    CliError::config(None, "inject-fault", format!("unknown fault `{s}`"))
                })?),
            };
            let report = run_selfcheck(fault);
            for c in &report.checks {
                println!("{c}");
            }
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", report.checks.len());
            return Ok(if failed == 0 {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILURE
            });
        }
        Command::Train(f) => (Mode::Train, f),
        Command::Compare(f) => (Mode::Compare, f),
        Command::Ablate(f) => (Mode::Ablate, f),
    };
    let m = build_manifest(mode, &flags)?;
    let runs = match mode {
        Mode::Train => run_train(&m, &mut progress)?,
        Mode::Compare => run_compare(&m, &mut progress)?,
        _ => run_ablate(&m, &mut progress)?,
    };
    for s in aggregate(&runs) {
        println!(
            "{:<18} runs {}  accuracy {:.4} ± {:.4}  few {:.4} ± {:.4}",
            s.variant, s.runs, s.mean_accuracy, s.std_accuracy, s.mean_few, s.std_few
        );
    }
    println!("outputs in {}", m.out.display());
    Ok(EXIT_OK)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
