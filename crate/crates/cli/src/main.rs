use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use instrumenta::analysis::{build_profile, compare_runs, suggest_filter};
use instrumenta::filter::{parse_filter, write_filter, FilterRuleSet};
use instrumenta::instrument::{instrument_module, InstrumentationMode};
use instrumenta::ir::{parse_module, print_module, IrModule};
use instrumenta::monitor::{read_trace, write_trace, TraceEvent};
use instrumenta::optimizer::OptLevel;
use instrumenta::vm::{execute, CostModel, ExitValue, RunConfig, DEFAULT_STEP_LIMIT};

#[derive(Parser)]
#[command(name = "instrumenta", version, about = "Instrument, run and profile programs in the instrumenta IR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Auto,
    Plugin,
}

impl From<Mode> for InstrumentationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Auto => InstrumentationMode::Auto,
            Mode::Plugin => InstrumentationMode::Plugin,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Insert entry/exit hooks into a module.
    Instrument {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Optimization level, e.g. -O2.
        #[arg(short = 'O', value_name = "LEVEL", default_value = "0")]
        level: OptLevel,
        /// Compile-time filter; ignored in auto mode.
        #[arg(long)]
        filter: Option<PathBuf>,
    },
    /// Execute a module and optionally write its trace.
    Run {
        input: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        runtime_filter: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        hook_guard: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        hook_event: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        hook_register: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..), default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u64,
        #[arg(long, default_value = "main")]
        entry: String,
    },
    /// Print the per-region profile of a trace.
    Report { trace: PathBuf },
    /// Compare enter-event counts and visits across traces.
    Compare {
        #[arg(required = true, value_name = "LABEL=TRACE", value_parser = parse_labeled)]
        runs: Vec<(String, PathBuf)>,
    },
    /// Propose a filter excluding short, frequently visited regions.
    SuggestFilter {
        trace: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        max_ticks_per_visit: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        min_visits: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn parse_labeled(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => Ok((label.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected LABEL=TRACE, got `{s}`")),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_module(path: &Path) -> Result<IrModule> {
    parse_module(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn load_filter(path: &Path) -> Result<FilterRuleSet> {
    parse_filter(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn load_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    read_trace(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Instrument { input, output, mode, level, filter } => {
            let m = load_module(&input)?;
            let rules = filter.as_deref().map(load_filter).transpose()?.unwrap_or_default();
            let (out, report, _) = instrument_module(&m, &rules, mode.into(), level)?;
            write(&output, &print_module(&out))?;
            eprintln!(
                "instrumented {} function(s), skipped {}, inlined {} call site(s)",
                report.instrumented.len(),
                report.skipped.len(),
                report.inline.inlined_sites.len()
            );
            for (name, reason) in &report.skipped {
                eprintln!("  skipped @{name}: {reason}");
            }
        }
        Command::Run { input, trace, runtime_filter, hook_guard, hook_event, hook_register, step_limit, entry } => {
            let m = load_module(&input)?;
            let defaults = CostModel::default();
            let cost = CostModel {
                hook_guard: hook_guard.unwrap_or(defaults.hook_guard),
                hook_event: hook_event.unwrap_or(defaults.hook_event),
                hook_register_first: hook_register.unwrap_or(defaults.hook_register_first),
                ..defaults
            };
            let runtime_filter = runtime_filter.as_deref().map(load_filter).transpose()?.unwrap_or_default();
            let config = RunConfig { entry, cost, runtime_filter, step_limit };
            let r = execute(&m, &config)?;
            if let Some(path) = trace {
                write(&path, &write_trace(&r.events))?;
            }
            match r.exit {
                ExitValue::Value(v) => println!("exit: {v}"),
                ExitValue::Uncaught => println!("exit: uncaught exception"),
            }
            println!("ticks: {}", r.total_ticks);
            println!("steps: {}", r.steps);
            println!("events: {}", r.events.len());
            println!("max depth: {}", r.max_depth);
        }
        Command::Report { trace } => {
            print!("{}", build_profile(&load_trace(&trace)?)?);
        }
        Command::Compare { runs } => {
            let loaded =
                runs.into_iter().map(|(label, path)| Ok((label, load_trace(&path)?))).collect::<Result<Vec<_>>>()?;
            print!("{}", compare_runs(&loaded)?);
        }
        Command::SuggestFilter { trace, max_ticks_per_visit, min_visits, output } => {
            let profile = build_profile(&load_trace(&trace)?)?;
            if profile.regions.is_empty() {
                bail!("{}: trace defines no regions", trace.display());
            }
            let text = write_filter(&suggest_filter(&profile, max_ticks_per_visit, min_visits));
            match output {
                Some(path) => write(&path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
