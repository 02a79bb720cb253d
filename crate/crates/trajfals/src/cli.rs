//! Command-line interface of the `trajfals` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use trajfals_core::falsify::SamplerKind;

use crate::bench::{run_benchmark, BenchConfig, DEFAULT_WORK};
use crate::config::{PredictorSpec, RunConfig};
use crate::error::{exit, Error, Result};
use crate::library::{load_library, load_program};
use crate::replay::{replay_run, REPLAY_TOLERANCE};
use crate::report::render_text;
use crate::runner::{read_report, run_falsification, write_outputs, REPORT_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "trajfals",
    version,
    about = "Falsify trajectory predictors with scenario programs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run falsification over scenario files.
    Run(RunArgs),
    /// Time the worker pool for several worker counts.
    Benchmark(BenchArgs),
    /// Re-evaluate every error-table row of a run directory.
    Replay(ReplayArgs),
    /// Parse, check and smoke-simulate a scenario library directory.
    Validate { dir: PathBuf },
    /// Print the summary table of a run directory.
    Report { run_dir: PathBuf },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario files, added to those in the config.
    pub scenarios: Vec<PathBuf>,
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sampler: Option<SamplerKind>,
    /// Samples per timepoint batch.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated timepoints.
    #[arg(long, value_delimiter = ',')]
    pub timepoints: Option<Vec<u32>>,
    /// Built-in predictor name.
    #[arg(long, conflicts_with = "predictor_cmd")]
    pub predictor: Option<String>,
    /// External predictor command; takes every remaining argument, so put it last.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    pub predictor_cmd: Option<Vec<String>>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub scenario: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 5])]
    pub workers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![25usize, 50, 75, 100])]
    pub iterations: Vec<usize>,
    /// Busy compute per sample in milliseconds.
    #[arg(long, default_value_t = DEFAULT_WORK.as_millis() as u64)]
    pub work_ms: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Measure the scenario evaluation alone, without synthetic work.
    #[arg(long)]
    pub real: bool,
    /// Where to write the CSV; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub run_dir: PathBuf,
    /// Use FILE for program ID instead of the recorded path (`ID=FILE`).
    #[arg(long = "scenario", value_parser = parse_override)]
    pub overrides: Vec<(String, PathBuf)>,
}

fn parse_override(s: &str) -> std::result::Result<(String, PathBuf), String> {
    let (id, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected ID=FILE, got `{s}`"))?;
    Ok((id.to_string(), PathBuf::from(path)))
}

impl RunArgs {
    pub fn to_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.scenarios.extend(self.scenarios.iter().cloned());
        if let Some(v) = self.sampler {
            cfg.sampler = v;
        }
        if let Some(v) = self.samples {
            cfg.n_samples = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.timepoints {
            cfg.timepoints = v.clone();
        }
        if let Some(v) = &self.predictor {
            cfg.predictor = PredictorSpec::Builtin(v.clone());
        }
        if let Some(v) = &self.predictor_cmd {
            cfg.predictor = PredictorSpec::External { command: v.clone() };
        }
        if let Some(v) = &self.out {
            cfg.output = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::SUCCESS
            };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Run(args) => {
            let cfg = args.to_config()?;
            let outcome = run_falsification(&cfg)?;
            write_outputs(&outcome, &cfg.output)?;
            write_out(out, &render_text(&outcome.report))?;
            write_out(
                out,
                &format!("outputs written to {}\n", cfg.output.display()),
            )?;
            Ok(exit::SUCCESS)
        }
        Command::Benchmark(args) => {
            let program = load_program(&args.scenario)?;
            let cfg = BenchConfig {
                workers: args.workers,
                iterations: args.iterations,
                work: Duration::from_millis(args.work_ms),
                seed: args.seed,
                real: args.real,
            };
            let report = run_benchmark(&program.program, &cfg)?;
            match &args.out {
                Some(p) => {
                    let f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
                    report.write_csv(f)?;
                }
                None => report.write_csv(&mut *out)?,
            }
            for &w in &cfg.workers {
                if w != 1 {
                    if let Some(s) = report.speedup(w) {
                        write_out(out, &format!("speedup w{w}: {s:.2}x\n"))?;
                    }
                }
            }
            Ok(exit::SUCCESS)
        }
        Command::Replay(args) => {
            let overrides: BTreeMap<String, PathBuf> = args.overrides.into_iter().collect();
            let outcomes = replay_run(&args.run_dir, &overrides)?;
            let mut mismatches = 0;
            for o in &outcomes {
                let status = if o.matches() { "ok" } else { "MISMATCH" };
                if !o.matches() {
                    mismatches += 1;
                }
                write_out(
                    out,
                    &format!(
                        "{} #{} t={} max_diff={:e} {status}\n",
                        o.program_id, o.index, o.timepoint, o.max_diff
                    ),
                )?;
            }
            write_out(
                out,
                &format!(
                    "{} rows replayed, {mismatches} outside {REPLAY_TOLERANCE:e}\n",
                    outcomes.len()
                ),
            )?;
            Ok(if mismatches == 0 {
                exit::SUCCESS
            } else {
                exit::USAGE
            })
        }
        Command::Validate { dir } => {
            let lib = load_library(&dir)?;
            for e in &lib {
                write_out(
                    out,
                    &format!(
                        "{:<28} {:>2} features  {}\n",
                        e.id, e.expected_features, e.title
                    ),
                )?;
            }
            write_out(out, &format!("{} scenarios ok\n", lib.len()))?;
            Ok(exit::SUCCESS)
        }
        Command::Report { run_dir } => {
            let report = read_report(&run_dir.join(REPORT_FILE))?;
            write_out(out, &render_text(&report))?;
            Ok(exit::SUCCESS)
        }
    }
}
