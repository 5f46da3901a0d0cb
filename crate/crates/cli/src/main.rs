use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vidwin::ingest::{MotionProfile, ScenarioConfig};
use vidwin::pipeline::{CompareError, CompareRunError};
use vidwin::{Config, ConfigError, FilterToggles, Mode, Parallelism, RunError};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "vidwin", version, about = "Edge/cloud windowed event matching over video streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one placement mode and write its reports.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// vanilla, content, edge or vidwin.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Run several placement modes on the same input and print a table.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated modes; the first is the baseline for deltas.
        #[arg(long, default_value = "vanilla,vidwin")]
        mode: String,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL frame manifest.
    #[arg(long, conflicts_with = "scenario")]
    input: Option<PathBuf>,
    /// Scenario TOML file, a motion profile name, or `random`.
    #[arg(long)]
    scenario: Option<String>,
    /// Query text, e.g. "MATCH OBJECT(car) WITHIN WINDOW(5,5) ACCURACY TOP-2".
    #[arg(long)]
    query: Option<String>,
    /// Comma list of eager, cache, utility, or `all` / `none`.
    #[arg(long)]
    filters: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for batches.csv, summary.json, matches.jsonl and windows.jsonl.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Compare(CompareError),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => CliError::Config(c),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<CompareRunError> for CliError {
    fn from(e: CompareRunError) -> Self {
        match e {
            CompareRunError::Compare(c) => CliError::Compare(c),
            CompareRunError::Run(r) => r.into(),
        }
    }
}

fn scenario_from_arg(arg: &str, seed: u64) -> Result<ScenarioConfig, ConfigError> {
    if arg == "random" {
        return Ok(ScenarioConfig::random(seed));
    }
    if let Some(motion) = MotionProfile::parse(arg) {
        return Ok(ScenarioConfig { motion, ..ScenarioConfig::random(seed) });
    }
    let path = Path::new(arg);
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    toml::from_str(&text).map_err(|e| ConfigError::invalid("scenario", e.to_string()))
}

fn build_config(args: &CommonArgs, mode: Option<&str>) -> Result<Config, ConfigError> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(path) = &args.input {
        cfg.input.manifest = Some(path.clone());
        cfg.input.scenario = None;
    }
    if let Some(s) = &args.scenario {
        cfg.input.scenario = Some(scenario_from_arg(s, cfg.seed)?);
        cfg.input.manifest = None;
    }
    if let Some(q) = &args.query {
        cfg.query = Some(q.clone());
    }
    if let Some(f) = &args.filters {
        cfg.filters = FilterToggles::parse_list(f)?;
    }
    if let Some(m) = mode {
        cfg.mode = Mode::parse(m).ok_or_else(|| ConfigError::invalid("mode", format!("unknown mode `{m}`")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, mode } => {
            let cfg = build_config(&common, mode.as_deref())?;
            let out = vidwin::run(&cfg)?;
            if let Some(dir) = &common.out_dir {
                out.write_to(dir).map_err(runtime)?;
            }
            let json = serde_json::to_string_pretty(&out.summary).map_err(runtime)?;
            println!("{json}");
        }
        Command::Compare { common, mode } => {
            let cfgs = mode
                .split(',')
                .map(str::trim)
                .filter(|m| !m.is_empty())
                .map(|m| build_config(&common, Some(m)))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = vidwin::compare(&cfgs, Parallelism::default())?;
            if let Some(dir) = &common.out_dir {
                std::fs::create_dir_all(dir).map_err(runtime)?;
                let file = std::fs::File::create(dir.join("compare.json")).map_err(runtime)?;
                serde_json::to_writer_pretty(file, &rows).map_err(runtime)?;
            }
            print!("{}", vidwin::render_comparison(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Compare(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
